use std::fs;
use std::process::{Command, Output};

fn lgsparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgsparse")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(lgsparse(&["pc-check"]).status.code(), Some(0));
    // Collapse breaches item 2: a finding, not an error.
    let out = lgsparse(&["pc-check", "--coupling", "collapse"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("amenability item 2"));
    for bad in [
        &["theorem", "--mode", "mc"][..],
        &["generate", "--task", "sorting", "--min-len", "2", "--max-len", "3", "--count", "1"],
        &["lg-check", "--instance", "theorem", "--train-len", "8"],
        &["risk", "--instance", "theorem", "--ensemble", "e.json", "--lengths", "4"],
        &["risk", "--ensemble", "/nonexistent", "--family", "/nonexistent", "--lengths", "4"],
    ] {
        assert_eq!(lgsparse(bad).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn rejected_theorem_cell_is_a_finding() {
    let out = lgsparse(&["theorem", "--instance", "delta0", "--test-lens", "11"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["body"][0]["outcome"]["status"], "rejected");
    assert!(report["findings"][0].as_str().unwrap().contains("does not divide"));
}

#[test]
fn csv_rows_and_file_instances() {
    let dir = tempfile::tempdir().unwrap();
    let out = lgsparse(&["risk", "--instance", "far-pair", "--lengths", "3,4", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.starts_with("case,hypothesis,length,risk,threshold,passed\n"));

    // The far-pair pieces written out and read back give the same risks.
    let fp = lgsparse_lab::instances::far_pair(lgsparse_lab::instances::FarPairCoupling::Transposition).unwrap();
    let e = dir.path().join("ens.json");
    let f = dir.path().join("fam.json");
    fs::write(&e, lgsparse::formats::ensemble_to_json(&fp.ensemble, 2..=4).unwrap()).unwrap();
    fs::write(&f, lgsparse::formats::family_to_json(&fp.local_family, 4, &[1, 2, 3, 4]).unwrap()).unwrap();
    let args = [
        "risk",
        "--ensemble",
        e.to_str().unwrap(),
        "--family",
        f.to_str().unwrap(),
        "--lengths",
        "3,4",
        "--format",
        "csv",
    ];
    let from_files = String::from_utf8(lgsparse(&args).stdout).unwrap();
    let risks = |s: &str| {
        s.lines()
            .skip(1)
            .map(|l| l.rsplitn(3, ',').nth(2).unwrap().rsplit(',').next().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(risks(&csv), risks(&from_files));
}

#[test]
fn generate_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let args = [
        "generate",
        "--task",
        "string_reversal",
        "--min-len",
        "3",
        "--max-len",
        "7",
        "--count",
        "20",
        "--alphabet",
        "5",
        "--positions",
        "offset",
        "--max-position-id",
        "40",
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(lgsparse(&args).status.code(), Some(0));
    let vocab = lgsparse::taskgen::reversal_vocab(5).unwrap();
    let text = fs::read_to_string(out.join("string_reversal.jsonl")).unwrap();
    let examples = lgsparse::formats::parse_examples(&text, &vocab).unwrap();
    assert_eq!(examples.len(), 20);
    for ex in &examples {
        let len = ex.predict_from - 1;
        assert!((3..=7).contains(&len));
        // The separator keeps ID 0; the mirrored IDs move together.
        assert_eq!(ex.position_ids[len], 0);
        assert!(ex.position_ids.iter().all(|&i| i <= 40));
        assert_eq!(ex.position_ids[0], ex.position_ids[ex.len() - 1]);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["params"]["num_examples"], 20);
    assert_eq!(manifest["params"]["vocab_size"], 5);
    assert_eq!(manifest["input_hash"], manifest["body"]["dataset_hash"]);
}
