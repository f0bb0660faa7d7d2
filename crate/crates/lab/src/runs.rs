//! One function per CLI subcommand. Each returns a `Report` whose content
//! depends only on its arguments.

use anyhow::{bail, ensure, Context, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use lgsparse::coupling::{
    check_index_invariance, pc_ensemble, pc_family, validate_coupling, AmenabilityCheck, IndexInvariance,
};
use lgsparse::ensembles::{counterexample, coverage_eta, Assumption, Ensemble, PlantedEnsemble};
use lgsparse::formats::{coupled_to_json, ensemble_to_json, example_to_line, family_to_json};
use lgsparse::hypotheses::{check_local, check_relative, HypothesisFamily};
use lgsparse::risk::{
    check_length_generalization, check_realizability, family_objectives, family_risks, population_risk, risk_minimize,
    training_lengths, verify_theorem_bound, LGReport, RiskMode, TheoremOutcome,
};
use lgsparse::rng::split;
use lgsparse::taskgen::{
    gen_variable_assignment, offset_positions, pose_positions, ppc_decode, CorruptedOracle, OraclePredictor, TaskSpec,
    ZeroIds,
};
use lgsparse::{Token, TOL};

use crate::instances::{adjacent_identity, far_pair, theorem_family, FarPairCoupling, TheoremInstance, THEOREM_WINDOW};
use crate::lemmas::{
    check_lemma_hybrid, constant_hybrid, default_hybrid, head_equivalence, ratio_sum_sweep, HybridReport, LemmaReport,
};
use crate::report::{content_hash, Report, RiskRow};

/// Threshold below which a risk counts as zero.
pub const ZERO: f64 = 1e-9;
/// Failing-length risk that counts as an Ω(1) failure.
pub const FAIL: f64 = 0.1;

fn report(command: &str, seed: u64, params: serde_json::Value, input: &str, thresholds: serde_json::Value) -> Report {
    Report {
        command: command.to_string(),
        seed,
        params,
        input_hash: content_hash(input),
        thresholds,
        passed: true,
        findings: Vec::new(),
        body: serde_json::Value::Null,
        rows: Vec::new(),
    }
}

fn finish(mut r: Report, body: impl Serialize) -> Result<Report> {
    r.passed = r.findings.is_empty();
    r.body = serde_json::to_value(body)?;
    Ok(r)
}

/// An ensemble with a token family, built in or read from files.
pub struct Instance {
    pub name: String,
    pub ensemble: PlantedEnsemble,
    pub family: HypothesisFamily<Token>,
    /// Serialized inputs, for the content hash.
    pub serialized: String,
}

pub const BUILTINS: [&str; 7] =
    ["theorem", "theorem-perturbed", "locality", "relative", "realizability", "coverage", "far-pair"];

fn serialize(ens: &PlantedEnsemble, fam: &HypothesisFamily<Token>, max_len: usize) -> Result<String> {
    let alphabet = ens.alphabet(max_len);
    Ok(format!("{}\n{}", ensemble_to_json(ens, 1..=max_len)?, family_to_json(fam, max_len, &alphabet)?))
}

/// `train_len` parameterizes the counterexample constructions; `max_len`
/// bounds the serialized tables.
pub fn builtin(name: &str, train_len: usize, max_len: usize) -> Result<Instance> {
    let (ensemble, family) = match name {
        "theorem" => (TheoremInstance::Exact.ensemble()?, theorem_family()?),
        "theorem-perturbed" => (TheoremInstance::Perturbed.ensemble()?, theorem_family()?),
        "far-pair" => {
            let fp = far_pair(FarPairCoupling::Transposition)?;
            (fp.ensemble, fp.local_family)
        }
        other => {
            let which: Assumption = other
                .parse()
                .with_context(|| format!("unknown instance `{other}`; expected one of {}", BUILTINS.join(", ")))?;
            let ce = counterexample(which, train_len)?;
            (ce.ensemble, ce.family)
        }
    };
    let serialized = serialize(&ensemble, &family, max_len)?;
    Ok(Instance { name: name.to_string(), ensemble, family, serialized })
}

pub fn from_files(ensemble_text: &str, family_text: &str) -> Result<Instance> {
    let ensemble = lgsparse::formats::parse_ensemble(ensemble_text).context("ensemble file")?;
    let family = lgsparse::formats::parse_family(family_text).context("family file")?;
    Ok(Instance { name: "file".into(), ensemble, family, serialized: format!("{ensemble_text}\n{family_text}") })
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremCell {
    pub instance: String,
    pub l_train: usize,
    pub l_test: usize,
    pub outcome: TheoremOutcome,
    pub passed: bool,
}

pub struct TheoremCase {
    pub name: String,
    pub ensemble: PlantedEnsemble,
    pub family: HypothesisFamily<Token>,
    pub delta: f64,
    pub window: usize,
    pub serialized: String,
}

pub fn theorem_case(which: TheoremInstance, max_len: usize) -> Result<TheoremCase> {
    let ensemble = which.ensemble()?;
    let family = theorem_family()?;
    let serialized = serialize(&ensemble, &family, max_len)?;
    Ok(TheoremCase {
        name: which.name().into(),
        ensemble,
        family,
        delta: which.delta(),
        window: THEOREM_WINDOW,
        serialized,
    })
}

/// Every (case, L̄) cell of the grid, in parallel; cells are reported in
/// input order.
pub fn run_theorem(
    cases: &[TheoremCase],
    train_len: usize,
    test_lens: &[usize],
    budget: u128,
    seed: u64,
) -> Result<Report> {
    ensure!(!cases.is_empty() && !test_lens.is_empty(), "empty theorem grid");
    let grid: Vec<(usize, usize)> = (0..cases.len()).flat_map(|c| test_lens.iter().map(move |&t| (c, t))).collect();
    let cells = grid
        .par_iter()
        .map(|&(c, t)| {
            let case = &cases[c];
            let outcome =
                verify_theorem_bound(&case.family, &case.ensemble, train_len, t, case.delta, case.window, budget)?;
            let passed = outcome.report().is_some_and(|r| r.report.holds);
            Ok(TheoremCell { instance: case.name.clone(), l_train: train_len, l_test: t, outcome, passed })
        })
        .collect::<Result<Vec<_>>>()?;
    let input: String = cases.iter().map(|c| c.serialized.as_str()).collect::<Vec<_>>().join("\n");
    let params = json!({
        "instances": cases.iter().map(|c| json!({"name": c.name, "delta": c.delta, "window": c.window})).collect::<Vec<_>>(),
        "l_train": train_len,
        "l_test": test_lens,
        "budget": budget.to_string(),
    });
    let mut r = report("theorem", seed, params, &input, json!({"epsilon_floor": ZERO}));
    for cell in &cells {
        match &cell.outcome {
            TheoremOutcome::Rejected(f) => r
                .findings
                .push(format!("{} L̄={}: rejected by {}: {}", cell.instance, cell.l_test, f.assumption, f.detail)),
            TheoremOutcome::Checked(t) => {
                let lg = &t.report;
                r.rows.push(
                    RiskRow::new(&cell.instance, &lg.chosen_name, lg.l_test, lg.test_risk).judged(lg.epsilon, lg.holds),
                );
                if !lg.holds {
                    r.findings.push(format!(
                        "{} L̄={}: risk {} exceeds bound {}",
                        cell.instance, cell.l_test, lg.test_risk, lg.epsilon
                    ));
                }
            }
        }
    }
    finish(r, cells)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gate {
    pub assumption: String,
    pub holds: bool,
    pub detail: String,
}

fn gate(which: Assumption, ce: &lgsparse::ensembles::Counterexample, budget: u128) -> Result<Gate> {
    let (k, w, top) = (ce.family.k(), ce.window, ce.fail_len);
    let alphabet = ce.ensemble.alphabet(top);
    let lens: Vec<usize> = (k..=top).collect();
    let (holds, detail) = match which {
        Assumption::Locality => {
            let mut out = (true, format!("every score is {w}-local on subsets of [{top}]"));
            for g0 in ce.family.score_fns() {
                if let Some((s, x)) = check_local(g0, k, w, top, &alphabet, budget)?.witness {
                    out = (false, format!("{} is finite on {s} with tokens {x:?}", g0.name()));
                    break;
                }
            }
            out
        }
        Assumption::Relative => {
            let mut out = (true, format!("every score is shift invariant on subsets of [{top}]"));
            for g0 in ce.family.score_fns() {
                if let Some((s, d, x)) = check_relative(g0, k, top, &alphabet, budget)?.witness {
                    out = (false, format!("{} changes under shift {d} of {s} with tokens {x:?}", g0.name()));
                    break;
                }
            }
            out
        }
        Assumption::Realizability => {
            let r = check_realizability(&ce.family, &ce.ensemble, &lens, 0.0, budget)?;
            match r.witness {
                Some(i) => (true, format!("{} has zero risk at lengths {k}..={top}", ce.family.member_name(i))),
                None => {
                    let best = r.worst.iter().cloned().fold(f64::INFINITY, f64::min);
                    (false, format!("smallest worst-case risk over lengths {k}..={top} is {best}"))
                }
            }
        }
        Assumption::Coverage => {
            let mut out = (true, String::new());
            let mut top_eta = 0.0f64;
            for &len in &lens {
                let c = coverage_eta(&ce.ensemble, len, w)?;
                if !c.is_finite() {
                    out = (false, format!("η at length {len} is infinite: {:?}", c.witness));
                    break;
                }
                top_eta = top_eta.max(c.eta / len as f64);
            }
            if out.0 {
                out.1 = format!("η_ℓ ≤ {top_eta}·ℓ for ℓ in {k}..={top}");
            }
            out
        }
    };
    Ok(Gate { assumption: which.name().to_string(), holds, detail })
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleResult {
    pub dropped: String,
    pub l_train: usize,
    pub fail_len: usize,
    pub designated: String,
    pub minimizer: String,
    pub train_objective: f64,
    pub fail_risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparator_risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_in_class_gap: Option<f64>,
    /// Minimizer, training objective, failing risk and gap as predicted.
    pub reproduced: bool,
    pub dropped_gate: Gate,
    pub retained: Vec<Gate>,
}

pub fn counterexample_result(which: Assumption, train_len: usize, budget: u128) -> Result<CounterexampleResult> {
    let ce = counterexample(which, train_len)?;
    let m = risk_minimize(&ce.family, &ce.ensemble, train_len, budget)?;
    let exact = RiskMode::Exact { budget };
    let fail_risk = population_risk(&ce.family.member(ce.designated), &ce.ensemble, ce.fail_len, exact)?.value;
    let comparator_risk = ce
        .comparator
        .map(|c| population_risk(&ce.family.member(c), &ce.ensemble, ce.fail_len, exact).map(|r| r.value))
        .transpose()?;
    let gap = comparator_risk.map(|c| fail_risk - c);
    let reproduced =
        m.index == ce.designated && m.objective <= ZERO && fail_risk >= FAIL && gap.map_or(true, |g| g > 0.0);
    let retained = Assumption::ALL
        .into_iter()
        .filter(|&a| a != which)
        .map(|a| gate(a, &ce, budget))
        .collect::<Result<Vec<_>>>()?;
    Ok(CounterexampleResult {
        dropped: which.name().into(),
        l_train: train_len,
        fail_len: ce.fail_len,
        designated: ce.family.member_name(ce.designated),
        minimizer: ce.family.member_name(m.index),
        train_objective: m.objective,
        fail_risk,
        comparator_risk,
        worst_in_class_gap: gap,
        reproduced,
        dropped_gate: gate(which, &ce, budget)?,
        retained,
    })
}

pub fn run_counterexamples(train_len: usize, budget: u128, seed: u64) -> Result<Report> {
    let results =
        Assumption::ALL.par_iter().map(|&a| counterexample_result(a, train_len, budget)).collect::<Result<Vec<_>>>()?;
    let mut input = String::new();
    for a in Assumption::ALL {
        let ce = counterexample(a, train_len)?;
        input.push_str(&serialize(&ce.ensemble, &ce.family, ce.fail_len)?);
    }
    let params = json!({"l_train": train_len, "budget": budget.to_string()});
    let mut r = report("counterexamples", seed, params, &input, json!({"zero": ZERO, "fail": FAIL}));
    for c in &results {
        r.rows.push(
            RiskRow::new(&c.dropped, &c.minimizer, c.l_train, c.train_objective)
                .judged(ZERO, c.train_objective <= ZERO),
        );
        r.rows.push(RiskRow::new(&c.dropped, &c.designated, c.fail_len, c.fail_risk).judged(FAIL, c.fail_risk >= FAIL));
        if !c.reproduced {
            r.findings.push(format!("{}: construction did not reproduce", c.dropped));
        }
        if c.dropped_gate.holds {
            r.findings.push(format!("{}: the dropped assumption passes its checker", c.dropped));
        }
        for g in c.retained.iter().filter(|g| !g.holds) {
            r.findings.push(format!("{}: retained {} fails: {}", c.dropped, g.assumption, g.detail));
        }
    }
    finish(r, results)
}

#[derive(Clone, Debug, Serialize)]
pub struct PcCheck {
    pub coupling: String,
    pub lengths: Vec<usize>,
    pub amenability: AmenabilityCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_invariance: Option<IndexInvariance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pc: Option<LGReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_local: Option<LGReport>,
    /// PC under an amenable identity coupling against the raw local family.
    pub identity: IdentityControl,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityControl {
    pub amenability: AmenabilityCheck,
    /// Largest gap over training objectives at L and risks at L̄.
    pub gap: f64,
}

/// PC objectives/risks on the adjacent-pair identity instance against the
/// raw local family on the raw ensemble.
pub fn identity_control(train_len: usize, test_len: usize, budget: u128) -> Result<IdentityControl> {
    let fp = adjacent_identity()?;
    let mut lengths: Vec<usize> = training_lengths(train_len).collect();
    lengths.push(test_len);
    let amenability = validate_coupling(&fp.coupling, fp.family.k(), fp.window, &lengths)?;
    let space = fp.ensemble.components().space;
    let fam = pc_family(&fp.family, fp.window, None, &space)?;
    let ens = pc_ensemble(fp.ensemble.clone(), fp.coupling.clone());
    let a = family_objectives(&fam, &ens, train_len, budget)?;
    let b = family_objectives(&fp.local_family, &fp.ensemble, train_len, budget)?;
    let c = family_risks(&fam, &ens, test_len, budget)?;
    let d = family_risks(&fp.local_family, &fp.ensemble, test_len, budget)?;
    let gap = a.iter().zip(&b).chain(c.iter().zip(&d)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(IdentityControl { amenability, gap })
}

pub fn run_pc_check(
    which: FarPairCoupling,
    train_len: usize,
    test_len: usize,
    budget: u128,
    seed: u64,
) -> Result<Report> {
    ensure!(test_len > train_len, "L̄ must exceed L");
    let fp = far_pair(which)?;
    let space = fp.ensemble.components().space;
    let k = fp.family.k();
    let mut lengths: Vec<usize> = training_lengths(train_len).collect();
    lengths.push(test_len);
    let ens = pc_ensemble(fp.ensemble.clone(), fp.coupling.clone());
    let input = format!(
        "{}\n{}",
        coupled_to_json(&ens, k..=test_len)?,
        family_to_json(&fp.family, test_len, &fp.ensemble.alphabet(test_len))?
    );
    let params = json!({"coupling": which.name(), "l_train": train_len, "l_test": test_len, "window": fp.window, "budget": budget.to_string()});
    let mut r =
        report("pc-check", seed, params, &input, json!({"pc_epsilon": ZERO, "raw_epsilon": FAIL, "identity": TOL}));

    let amenability = validate_coupling(&fp.coupling, k, fp.window, &lengths)?;
    let mut out = PcCheck {
        coupling: which.name().into(),
        lengths: lengths.clone(),
        amenability: amenability.clone(),
        index_invariance: None,
        pc: None,
        raw_local: None,
        identity: identity_control(train_len, test_len, budget)?,
    };
    if !out.identity.amenability.holds {
        r.findings.push(format!("identity control is not amenable: {:?}", out.identity.amenability.violation));
    }
    if out.identity.gap > TOL {
        r.findings.push(format!("identity coupling differs from the raw local family by {}", out.identity.gap));
    }
    if let Some(v) = &amenability.violation {
        r.findings.push(format!("amenability item {} fails at length {}: {}", v.item, v.len, v.detail));
        return finish(r, out);
    }
    let fam = pc_family(&fp.family, fp.window, None, &space)?;
    let inv = check_index_invariance(&fam, &ens, &lengths, budget)?;
    let invariant = inv.holds;
    if let Some(w) = &inv.witness {
        r.findings.push(format!("PC family reads the random index: {w}"));
    }
    out.index_invariance = Some(inv);
    if !invariant {
        return finish(r, out);
    }
    let pc = check_length_generalization(&fam, &ens, train_len, test_len, ZERO, budget)?;
    let raw = check_length_generalization(&fp.local_family, &fp.ensemble, train_len, test_len, FAIL, budget)?;
    r.rows.push(RiskRow::new("pc", &pc.chosen_name, test_len, pc.test_risk).judged(ZERO, pc.holds));
    r.rows.push(RiskRow::new("raw_local", &raw.chosen_name, test_len, raw.test_risk).judged(FAIL, raw.holds));
    if !pc.holds {
        r.findings.push(format!("PC family risk {} at L̄ = {test_len} exceeds {ZERO}", pc.test_risk));
    }
    if raw.holds {
        r.findings.push(format!("raw local family risk {} at L̄ = {test_len} is within {FAIL}", raw.test_risk));
    }
    out.pc = Some(pc);
    out.raw_local = Some(raw);
    finish(r, out)
}

pub fn run_lg_check(
    inst: &Instance,
    train_len: usize,
    test_len: usize,
    epsilon: f64,
    budget: u128,
    seed: u64,
) -> Result<Report> {
    let lg = check_length_generalization(&inst.family, &inst.ensemble, train_len, test_len, epsilon, budget)?;
    let params = json!({"instance": inst.name, "l_train": train_len, "l_test": test_len, "budget": budget.to_string()});
    let mut r = report("lg-check", seed, params, &inst.serialized, json!({"epsilon": epsilon}));
    r.rows.push(RiskRow::new(&inst.name, &lg.chosen_name, test_len, lg.test_risk).judged(epsilon, lg.holds));
    if !lg.holds {
        r.findings.push(format!("risk {} of {} at L̄ = {test_len} exceeds ε = {epsilon}", lg.test_risk, lg.chosen_name));
    }
    finish(r, lg)
}

#[derive(Clone, Debug, Serialize)]
pub struct RiskEntry {
    pub hypothesis: String,
    pub length: usize,
    pub risk: lgsparse::risk::RiskReport,
}

/// Risk of every member at every length; Monte-Carlo streams are split per
/// (member, length) so the output does not depend on scheduling.
pub fn run_risk(inst: &Instance, lengths: &[usize], mode: RiskMode, seed: u64) -> Result<Report> {
    let cells: Vec<(usize, usize)> =
        (0..inst.family.len()).flat_map(|h| lengths.iter().map(move |&l| (h, l))).collect();
    let entries = cells
        .par_iter()
        .enumerate()
        .map(|(c, &(h, len))| {
            let m = match mode {
                RiskMode::MonteCarlo { samples, seed } => {
                    RiskMode::MonteCarlo { samples, seed: split(seed, c as u64).gen() }
                }
                e => e,
            };
            let risk = population_risk(&inst.family.member(h), &inst.ensemble, len, m)?;
            Ok(RiskEntry { hypothesis: inst.family.member_name(h), length: len, risk })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = json!({"instance": inst.name, "lengths": lengths, "mode": mode});
    let mut r = report("risk", seed, params, &inst.serialized, serde_json::Value::Null);
    for e in &entries {
        r.rows.push(RiskRow::new(&inst.name, &e.hypothesis, e.length, e.risk.value));
    }
    finish(r, entries)
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaSuite {
    pub ratio_sum: LemmaReport,
    pub hybrid: HybridReport,
    pub hybrid_constant: HybridReport,
    pub attention_head: LemmaReport,
}

pub fn run_lemmas(trials: usize, samples: usize, i_max: usize, seed: u64) -> Result<Report> {
    let suite = LemmaSuite {
        ratio_sum: ratio_sum_sweep(trials, &mut split(seed, 0))?,
        hybrid: check_lemma_hybrid(&default_hybrid(), i_max, samples, &mut split(seed, 1))?,
        hybrid_constant: check_lemma_hybrid(&constant_hybrid(), i_max, samples.min(1000), &mut split(seed, 2))?,
        attention_head: head_equivalence(100, split(seed, 3).gen())?,
    };
    let params = json!({"trials": trials, "samples": samples, "i_max": i_max});
    let mut r = report("lemmas", seed, params, "", json!({"exact": TOL, "monte_carlo_std_errs": 5}));
    for rep in [&suite.ratio_sum, &suite.hybrid.report, &suite.hybrid_constant.report, &suite.attention_head] {
        if !rep.passed {
            r.findings.push(format!("{}: violation {} above {}", rep.lemma, rep.max_violation, rep.tolerance));
        }
    }
    finish(r, suite)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PositionScheme {
    /// The task's coupled IDs as generated.
    Coupled,
    /// Coupled IDs plus a uniform offset; zero IDs stay at zero.
    Offset,
    /// Two-chunk PoSE IDs over the whole sequence.
    Pose,
}

#[derive(Clone, Debug, Serialize)]
pub struct GenerateConfig {
    pub task: String,
    pub min_length: usize,
    pub max_length: usize,
    pub num_examples: usize,
    pub k: usize,
    pub vocab_size: usize,
    pub jump: usize,
    pub depth: usize,
    pub positions: PositionScheme,
    pub max_position_id: Option<usize>,
}

impl GenerateConfig {
    fn spec(&self, len: usize) -> Result<TaskSpec> {
        Ok(match self.task.as_str() {
            "sparse_parity" => TaskSpec::SparseParity { len, k: self.k, n: self.vocab_size },
            "parity_scratchpad" => TaskSpec::ParityScratchpad { len, jump: self.jump },
            "variable_assignment" => TaskSpec::VariableAssignment { len, depth: self.depth, vars: self.vocab_size },
            "string_reversal" => TaskSpec::StringReversal { len, alphabet: self.vocab_size },
            other => bail!(
                "unknown task `{other}`; expected sparse_parity, parity_scratchpad, variable_assignment or string_reversal"
            ),
        })
    }

    /// Lengths in range; for the scratchpad task only multiples of `jump`.
    fn lengths(&self) -> Result<Vec<usize>> {
        ensure!(self.min_length >= 1 && self.min_length <= self.max_length, "need 1 <= min_length <= max_length");
        let step = if self.task == "parity_scratchpad" { self.jump.max(1) } else { 1 };
        let lens: Vec<usize> = (self.min_length..=self.max_length).filter(|l| l % step == 0).collect();
        ensure!(!lens.is_empty(), "no length in [{}, {}] is a multiple of {step}", self.min_length, self.max_length);
        Ok(lens)
    }
}

pub struct Dataset {
    pub jsonl: String,
    pub manifest: Report,
}

/// Example `i` draws its length, content and IDs from stream `i` of `seed`.
pub fn run_generate(cfg: &GenerateConfig, seed: u64) -> Result<Dataset> {
    let lens = cfg.lengths()?;
    let vocab = cfg.spec(lens[0])?.vocab()?;
    if cfg.positions != PositionScheme::Coupled {
        ensure!(cfg.max_position_id.is_some(), "--max-position-id is required with {:?} positions", cfg.positions);
    }
    let lines = (0..cfg.num_examples)
        .into_par_iter()
        .map(|i| {
            let mut rng = split(seed, i as u64);
            let len = lens[rng.gen_range(0..lens.len())];
            let mut ex = cfg.spec(len)?.generate(&mut rng)?;
            match (cfg.positions, cfg.max_position_id) {
                (PositionScheme::Offset, Some(m)) => {
                    ex.position_ids = offset_positions(&ex.position_ids, m, ZeroIds::Keep, &mut rng)?
                }
                (PositionScheme::Pose, Some(m)) => ex.position_ids = pose_positions(ex.len(), m, &mut rng)?,
                _ => {}
            }
            Ok(example_to_line(&ex, &vocab)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut jsonl = lines.join("\n");
    if !jsonl.is_empty() {
        jsonl.push('\n');
    }
    let mut manifest = report("generate", seed, serde_json::to_value(cfg)?, &jsonl, serde_json::Value::Null);
    manifest.body = json!({"lines": lines.len(), "vocab": vocab, "dataset_hash": content_hash(&jsonl)});
    Ok(Dataset { jsonl, manifest })
}

#[derive(Clone, Debug, Serialize)]
pub struct PpcCase {
    pub length: usize,
    pub depth: usize,
    pub oracle_match: bool,
    pub corrupted_at: usize,
    pub corrupted_match: bool,
    pub divergence: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PpcSummary {
    pub cases: Vec<PpcCase>,
    pub oracle_full_match: f64,
    pub corrupted_full_match: f64,
}

/// Variable-assignment instances of every depth up to `max_depth`; each is
/// decoded by the oracle and by an oracle with one corrupted position ID.
pub fn run_ppc_demo(max_len: usize, max_depth: usize, vars: usize, count: usize, seed: u64) -> Result<Report> {
    ensure!(count > 0 && max_depth > 0, "need at least one instance of depth >= 1");
    let cases = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = split(seed, i as u64);
            let depth = 1 + i % max_depth;
            ensure!(3 * depth <= max_len, "length {max_len} cannot hold a chain of depth {depth}");
            let len = rng.gen_range(3 * depth..=max_len);
            let ex = gen_variable_assignment(len, depth, vars, &mut rng)?;
            let oracle = ppc_decode(&OraclePredictor::new(ex.clone()), &ex, usize::MAX);
            let at = rng.gen_range(ex.predict_from..ex.len());
            let bad = ppc_decode(&CorruptedOracle::new(ex.clone(), at), &ex, usize::MAX);
            Ok(PpcCase {
                length: len,
                depth,
                oracle_match: oracle.full_match,
                corrupted_at: at,
                corrupted_match: bad.full_match,
                divergence: bad.divergence.map(|d| d.position),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rate = |f: fn(&PpcCase) -> bool| cases.iter().filter(|c| f(c)).count() as f64 / cases.len() as f64;
    let summary = PpcSummary {
        oracle_full_match: rate(|c| c.oracle_match),
        corrupted_full_match: rate(|c| c.corrupted_match),
        cases,
    };
    let params = json!({"max_length": max_len, "max_depth": max_depth, "vars": vars, "count": count});
    let mut r = report("ppc-demo", seed, params, "", serde_json::Value::Null);
    if summary.oracle_full_match < 1.0 {
        r.findings.push(format!("oracle full_match rate {}", summary.oracle_full_match));
    }
    for c in summary.cases.iter().filter(|c| c.corrupted_match || c.divergence != Some(c.corrupted_at)) {
        r.findings.push(format!("corruption at {} reported as {:?}", c.corrupted_at, c.divergence));
    }
    finish(r, summary)
}

/// The exact and perturbed built-in instances.
pub fn default_theorem_cases(max_len: usize) -> Result<Vec<TheoremCase>> {
    [TheoremInstance::Exact, TheoremInstance::Perturbed].into_iter().map(|w| theorem_case(w, max_len)).collect()
}

pub fn file_theorem_case(inst: Instance, delta: f64, window: usize) -> TheoremCase {
    TheoremCase {
        name: inst.name,
        ensemble: inst.ensemble,
        family: inst.family,
        delta,
        window,
        serialized: inst.serialized,
    }
}
