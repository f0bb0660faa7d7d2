//! Report envelope, content hashing and JSON/CSV emission.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 over `blob <len>\0<content>`, the git object layout.
pub fn content_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content.as_bytes());
    hex::encode(h.finalize())
}

/// One flat CSV row: a risk of one hypothesis at one length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskRow {
    pub case: String,
    pub hypothesis: String,
    pub length: usize,
    pub risk: f64,
    pub threshold: Option<f64>,
    pub passed: Option<bool>,
}

impl RiskRow {
    pub fn new(case: impl Into<String>, hypothesis: impl Into<String>, length: usize, risk: f64) -> Self {
        RiskRow { case: case.into(), hypothesis: hypothesis.into(), length, risk, threshold: None, passed: None }
    }

    pub fn judged(mut self, threshold: f64, passed: bool) -> Self {
        self.threshold = Some(threshold);
        self.passed = Some(passed);
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub input_hash: String,
    pub thresholds: serde_json::Value,
    pub passed: bool,
    pub findings: Vec<String>,
    pub body: serde_json::Value,
    #[serde(skip)]
    pub rows: Vec<RiskRow>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["case", "hypothesis", "length", "risk", "threshold", "passed"])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Writes `<command>.json` or `<command>.csv` under `out`, or prints to
/// stdout when no directory is given.
pub fn emit(report: &Report, format: Format, out: Option<&Path>) -> Result<()> {
    let (text, ext) = match format {
        Format::Json => (report.to_json()?, "json"),
        Format::Csv => (report.to_csv()?, "csv"),
    };
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}.{ext}", report.command));
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_uses_blob_header() {
        // sha256("blob 0\0"), as computed by `git hash-object --object-format=sha256`.
        assert_eq!(content_hash(""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
        assert_ne!(content_hash("a"), content_hash("b"));
    }

    #[test]
    fn csv_has_one_row_per_risk() {
        let report = Report {
            command: "risk".into(),
            seed: 0,
            params: serde_json::Value::Null,
            input_hash: String::new(),
            thresholds: serde_json::Value::Null,
            passed: true,
            findings: vec![],
            body: serde_json::Value::Null,
            rows: vec![RiskRow::new("a", "h[x,y]", 4, 0.25), RiskRow::new("a", "h[x,y]", 5, 0.5).judged(0.1, false)],
        };
        let csv = report.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "case,hypothesis,length,risk,threshold,passed");
        assert_eq!(lines[1], "a,\"h[x,y]\",4,0.25,,");
        assert_eq!(lines[2], "a,\"h[x,y]\",5,0.5,0.1,false");
        assert!(!report.to_json().unwrap().contains("rows"));
    }
}
