//! JSON documents for ensembles, hypothesis families and coupled laws, and
//! the JSON-lines example format. Parsers return errors on any malformed or
//! inconsistent input.
//!
//! Tuples are JSON arrays; probabilities are decimal (or `a/b`) strings;
//! a score of −∞ is the string `"-inf"`; indices are 1-based.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::coupling::{CoupledEnsemble, CoupledLaw, Coupling, CouplingMap};
use crate::domain::{format_prob, parse_prob, LabelSpace, LabelVec, Norm, Subset, Token, Vocab};
use crate::ensembles::{Components, PlantedEnsemble, PosLaw, QPos};
use crate::error::{Error, Result};
use crate::hypotheses::{FunctionalAttention, HypothesisFamily, ScoreFn, ScoreForm, ValueFn, ValueForm};
use crate::taskgen::TaggedExample;

/// Upper bound on label dimension accepted from documents.
pub const MAX_DIM: usize = 1 << 12;

type PosTable = Vec<(Vec<usize>, String)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QPosDoc {
    Table(Vec<(usize, PosTable)>),
    Shifted { window: usize, base: PosTable },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDoc {
    pub k: usize,
    pub d: usize,
    #[serde(default)]
    pub norm: Norm,
    pub vocab: Vec<Token>,
    pub mu: Vec<String>,
    pub qvoc: Vec<(Vec<Token>, String)>,
    pub qpos: QPosDoc,
    pub gstar: Vec<(Vec<Token>, Vec<f64>)>,
}

fn parse_law(entries: &PosTable) -> Result<PosLaw> {
    let mut out = Vec::with_capacity(entries.len());
    for (s, p) in entries {
        out.push((Subset::new(s.clone())?, parse_prob(p)?));
    }
    Ok(PosLaw::new(out))
}

fn write_law(law: &PosLaw) -> PosTable {
    law.entries().iter().map(|(s, p)| (s.indices().to_vec(), format_prob(*p))).collect()
}

fn label_space(d: usize, norm: Norm) -> Result<LabelSpace> {
    if d > MAX_DIM {
        return Err(Error::param(format!("label dimension {d} above {MAX_DIM}")));
    }
    LabelSpace::new(d, norm)
}

impl EnsembleDoc {
    pub fn build(&self) -> Result<PlantedEnsemble> {
        let space = label_space(self.d, self.norm)?;
        let mu = self.mu.iter().map(|p| parse_prob(p)).collect::<Result<Vec<_>>>()?;
        let qvoc = self.qvoc.iter().map(|(z, p)| Ok((z.clone(), parse_prob(p)?))).collect::<Result<Vec<_>>>()?;
        let mut gstar = BTreeMap::new();
        for (z, y) in &self.gstar {
            if gstar.insert(z.clone(), LabelVec(y.clone())).is_some() {
                return Err(Error::Parse(format!("gstar entry {z:?} repeated")));
            }
        }
        let qpos = match &self.qpos {
            QPosDoc::Table(rows) => {
                let mut t = BTreeMap::new();
                for (len, entries) in rows {
                    if t.insert(*len, parse_law(entries)?).is_some() {
                        return Err(Error::Parse(format!("qpos length {len} repeated")));
                    }
                }
                QPos::Table(t)
            }
            QPosDoc::Shifted { window, base } => QPos::Shifted { window: *window, base: parse_law(base)? },
        };
        let parts = Components {
            k: self.k,
            space,
            vocab: self.vocab.clone(),
            mu,
            qvoc,
            gstar: ValueFn::table("gstar", gstar, None),
        };
        let ens = PlantedEnsemble::new(parts, qpos)?;
        if let QPos::Table(t) = ens.qpos() {
            for &len in t.keys() {
                ens.qpos().law(len, self.k)?;
            }
        }
        Ok(ens)
    }

    /// Generated position laws are written out as tables over `lengths`.
    pub fn from_ensemble(ens: &PlantedEnsemble, lengths: RangeInclusive<usize>) -> Result<Self> {
        let c = ens.components();
        let qpos = match ens.qpos() {
            QPos::Shifted { window, base } => QPosDoc::Shifted { window: *window, base: write_law(base) },
            q => match q.materialize(c.k, lengths)? {
                QPos::Table(t) => QPosDoc::Table(t.iter().map(|(len, law)| (*len, write_law(law))).collect()),
                _ => unreachable!("materialize returns a table"),
            },
        };
        let mut gstar = Vec::with_capacity(c.qvoc.len());
        for (z, _) in &c.qvoc {
            gstar.push((z.clone(), c.gstar.value(z)?.0));
        }
        Ok(EnsembleDoc {
            k: c.k,
            d: c.space.dim,
            norm: c.space.norm,
            vocab: c.vocab.clone(),
            mu: c.mu.iter().map(|p| format_prob(*p)).collect(),
            qvoc: c.qvoc.iter().map(|(z, p)| (z.clone(), format_prob(*p))).collect(),
            qpos,
            gstar,
        })
    }
}

pub fn parse_ensemble(text: &str) -> Result<PlantedEnsemble> {
    serde_json::from_str::<EnsembleDoc>(text)?.build()
}

pub fn ensemble_to_json(ens: &PlantedEnsemble, lengths: RangeInclusive<usize>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&EnsembleDoc::from_ensemble(ens, lengths)?)?)
}

/// A finite score or −∞.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScore", into = "RawScore")]
pub struct Score(pub f64);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawScore {
    Num(f64),
    Text(String),
}

impl TryFrom<RawScore> for Score {
    type Error = String;
    fn try_from(r: RawScore) -> std::result::Result<Self, String> {
        match r {
            RawScore::Num(v) if v.is_finite() => Ok(Score(v)),
            RawScore::Text(s) if s == "-inf" => Ok(Score(f64::NEG_INFINITY)),
            RawScore::Num(v) => Err(format!("score {v} is not finite")),
            RawScore::Text(s) => Err(format!("score `{s}` is neither a number nor \"-inf\"")),
        }
    }
}

impl From<Score> for RawScore {
    fn from(s: Score) -> Self {
        if s.0 == f64::NEG_INFINITY {
            RawScore::Text("-inf".into())
        } else {
            RawScore::Num(s.0)
        }
    }
}

/// One score function. Exactly one of `scores` (keyed by subset and tokens)
/// and `content` (keyed by tokens alone) is present; missing keys score
/// `default`, itself −∞ unless given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relative: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Score>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<(Vec<usize>, Vec<Token>, Score)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<Vec<(Vec<Token>, Score)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueDoc {
    pub name: String,
    pub values: Vec<(Vec<Token>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDoc {
    pub k: usize,
    pub score_fns: Vec<ScoreDoc>,
    pub value_fns: Vec<ValueDoc>,
}

/// A single table-form hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisDoc {
    pub k: usize,
    pub scores: Vec<(Vec<usize>, Vec<Token>, Score)>,
    pub values: Vec<(Vec<Token>, Vec<f64>)>,
}

fn check_word(what: &str, x: &[Token], k: usize) -> Result<()> {
    if x.len() != k {
        return Err(Error::Parse(format!("{what} key {x:?} does not have length {k}")));
    }
    Ok(())
}

impl ScoreDoc {
    fn build(&self, k: usize) -> Result<ScoreFn<Token>> {
        let default = self.default.map_or(f64::NEG_INFINITY, |s| s.0);
        let g0 = match (&self.scores, &self.content) {
            (Some(rows), None) => {
                let mut t = BTreeMap::new();
                for (s, x, v) in rows {
                    let s = Subset::new(s.clone())?;
                    if s.len() != k {
                        return Err(Error::Parse(format!("score subset {:?} does not have size {k}", s.indices())));
                    }
                    check_word("score", x, k)?;
                    if t.insert((s.indices().to_vec(), x.clone()), v.0).is_some() {
                        return Err(Error::Parse(format!("score entry ({:?}, {x:?}) repeated", s.indices())));
                    }
                }
                ScoreFn::table(self.name.clone(), t, default)
            }
            (None, Some(rows)) => {
                let mut t = BTreeMap::new();
                for (x, v) in rows {
                    check_word("score", x, k)?;
                    if t.insert(x.clone(), v.0).is_some() {
                        return Err(Error::Parse(format!("score entry {x:?} repeated")));
                    }
                }
                ScoreFn::content_table(self.name.clone(), t, default)
            }
            _ => {
                return Err(Error::Parse(format!("score `{}` needs exactly one of `scores` and `content`", self.name)))
            }
        };
        let g0 = match self.local {
            Some(w) => g0.declare_local(w),
            None => g0,
        };
        Ok(if self.relative { g0.declare_relative() } else { g0 })
    }

    /// Rule forms are tabulated over subsets of `[max_len]` and `alphabet^k`.
    pub fn from_score(g0: &ScoreFn<Token>, k: usize, max_len: usize, alphabet: &[Token]) -> Self {
        let tab;
        let g = match g0.form() {
            ScoreForm::Table { .. } | ScoreForm::ContentTable { .. } => g0,
            _ => {
                tab = g0.tabulate(max_len, k, alphabet);
                &tab
            }
        };
        let mut doc = ScoreDoc {
            name: g.name().to_string(),
            local: g.declared_locality(),
            relative: g.declared_relative(),
            default: None,
            scores: None,
            content: None,
        };
        let finite_default = |d: f64| (d != f64::NEG_INFINITY).then_some(Score(d));
        match g.form() {
            ScoreForm::Table { entries, default } => {
                doc.default = finite_default(*default);
                doc.scores = Some(entries.iter().map(|((s, x), v)| (s.clone(), x.clone(), Score(*v))).collect());
            }
            ScoreForm::ContentTable { entries, default } => {
                doc.default = finite_default(*default);
                doc.content = Some(entries.iter().map(|(x, v)| (x.clone(), Score(*v))).collect());
            }
            _ => unreachable!("tabulated above"),
        }
        doc
    }
}

fn build_values(name: &str, rows: &[(Vec<Token>, Vec<f64>)], k: usize) -> Result<ValueFn<Token>> {
    let mut t = BTreeMap::new();
    let mut dim = None;
    for (x, y) in rows {
        check_word("value", x, k)?;
        if y.is_empty() || y.len() > MAX_DIM || *dim.get_or_insert(y.len()) != y.len() {
            return Err(Error::Parse(format!("value for {x:?} has a bad dimension")));
        }
        if t.insert(x.clone(), LabelVec(y.clone())).is_some() {
            return Err(Error::Parse(format!("value entry {x:?} repeated")));
        }
    }
    Ok(ValueFn::table(name, t, None))
}

fn write_values(g1: &ValueFn<Token>, k: usize, alphabet: &[Token]) -> Result<Vec<(Vec<Token>, Vec<f64>)>> {
    let tab;
    let g = match g1.form() {
        ValueForm::Table { default: None, .. } => g1,
        _ => {
            tab = g1.tabulate(k, alphabet)?;
            &tab
        }
    };
    match g.form() {
        ValueForm::Table { entries, .. } => Ok(entries.iter().map(|(x, y)| (x.clone(), y.0.clone())).collect()),
        ValueForm::Rule(_) => unreachable!("tabulated above"),
    }
}

impl FamilyDoc {
    pub fn build(&self) -> Result<HypothesisFamily<Token>> {
        let g0s = self.score_fns.iter().map(|d| d.build(self.k)).collect::<Result<Vec<_>>>()?;
        let g1s =
            self.value_fns.iter().map(|d| build_values(&d.name, &d.values, self.k)).collect::<Result<Vec<_>>>()?;
        HypothesisFamily::new(self.k, g0s, g1s)
    }

    pub fn from_family(fam: &HypothesisFamily<Token>, max_len: usize, alphabet: &[Token]) -> Result<Self> {
        let k = fam.k();
        Ok(FamilyDoc {
            k,
            score_fns: fam.score_fns().iter().map(|g| ScoreDoc::from_score(g, k, max_len, alphabet)).collect(),
            value_fns: fam
                .value_fns()
                .iter()
                .map(|g| Ok(ValueDoc { name: g.name().to_string(), values: write_values(g, k, alphabet)? }))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

impl HypothesisDoc {
    pub fn build(&self) -> Result<FunctionalAttention<Token>> {
        let g0 = ScoreDoc {
            name: "g0".into(),
            local: None,
            relative: false,
            default: None,
            scores: Some(self.scores.clone()),
            content: None,
        }
        .build(self.k)?;
        let g1 = build_values("g1", &self.values, self.k)?;
        FunctionalAttention::new(g0, g1, self.k)
    }
}

pub fn parse_family(text: &str) -> Result<HypothesisFamily<Token>> {
    serde_json::from_str::<FamilyDoc>(text)?.build()
}

pub fn family_to_json(fam: &HypothesisFamily<Token>, max_len: usize, alphabet: &[Token]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&FamilyDoc::from_family(fam, max_len, alphabet)?)?)
}

pub fn parse_hypothesis(text: &str) -> Result<FunctionalAttention<Token>> {
    serde_json::from_str::<HypothesisDoc>(text)?.build()
}

/// Ensemble fields plus the coupled law, one atom list per length with ψ
/// as an explicit index array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledDoc {
    pub k: usize,
    pub d: usize,
    #[serde(default)]
    pub norm: Norm,
    pub vocab: Vec<Token>,
    pub mu: Vec<String>,
    pub qvoc: Vec<(Vec<Token>, String)>,
    pub qpos: QPosDoc,
    pub gstar: Vec<(Vec<Token>, Vec<f64>)>,
    pub coupling: Vec<(usize, Vec<(Vec<usize>, Vec<usize>, String)>)>,
}

impl CoupledDoc {
    /// Every listed length is checked against the base position law.
    pub fn build(&self) -> Result<CoupledEnsemble> {
        let base = EnsembleDoc {
            k: self.k,
            d: self.d,
            norm: self.norm,
            vocab: self.vocab.clone(),
            mu: self.mu.clone(),
            qvoc: self.qvoc.clone(),
            qpos: self.qpos.clone(),
            gstar: self.gstar.clone(),
        }
        .build()?;
        let mut t = BTreeMap::new();
        for (len, atoms) in &self.coupling {
            let mut law = Vec::with_capacity(atoms.len());
            for (s, psi, p) in atoms {
                law.push((Subset::new(s.clone())?, CouplingMap::new(psi.clone())?, parse_prob(p)?));
            }
            if t.insert(*len, CoupledLaw::new(law)).is_some() {
                return Err(Error::Parse(format!("coupling length {len} repeated")));
            }
        }
        let lens: Vec<usize> = t.keys().copied().collect();
        let ens = CoupledEnsemble::new(base, Coupling::Table(t));
        for len in lens {
            ens.law(len)?;
        }
        Ok(ens)
    }

    pub fn from_coupled(ens: &CoupledEnsemble, lengths: RangeInclusive<usize>) -> Result<Self> {
        let k = ens.base().k();
        let mut coupling = Vec::new();
        if let Coupling::Table(t) = ens.coupling().materialize(k, lengths.clone())? {
            for (len, law) in t {
                let atoms = law
                    .atoms
                    .iter()
                    .map(|(s, psi, p)| (s.indices().to_vec(), psi.as_slice().to_vec(), format_prob(*p)))
                    .collect();
                coupling.push((len, atoms));
            }
        }
        let e = EnsembleDoc::from_ensemble(ens.base(), lengths)?;
        Ok(CoupledDoc {
            k: e.k,
            d: e.d,
            norm: e.norm,
            vocab: e.vocab,
            mu: e.mu,
            qvoc: e.qvoc,
            qpos: e.qpos,
            gstar: e.gstar,
            coupling,
        })
    }
}

pub fn parse_coupled(text: &str) -> Result<CoupledEnsemble> {
    serde_json::from_str::<CoupledDoc>(text)?.build()
}

pub fn coupled_to_json(ens: &CoupledEnsemble, lengths: RangeInclusive<usize>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CoupledDoc::from_coupled(ens, lengths)?)?)
}

/// One JSON line with tokens rendered as vocabulary names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleLine {
    pub tokens: Vec<String>,
    pub position_ids: Vec<usize>,
    pub predict_from: usize,
    pub answer: Option<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

fn token_name(vocab: &Vocab, t: Token) -> Result<String> {
    vocab.name(t).map(str::to_string).ok_or_else(|| Error::UnknownToken(t.to_string()))
}

fn token_id(vocab: &Vocab, name: &str) -> Result<Token> {
    vocab.lookup(name).ok_or_else(|| Error::UnknownToken(name.to_string()))
}

pub fn example_to_line(ex: &TaggedExample, vocab: &Vocab) -> Result<String> {
    let line = ExampleLine {
        tokens: ex.tokens.iter().map(|&t| token_name(vocab, t)).collect::<Result<_>>()?,
        position_ids: ex.position_ids.clone(),
        predict_from: ex.predict_from,
        answer: ex.answer.map(|t| token_name(vocab, t)).transpose()?,
        meta: ex.meta.clone(),
    };
    Ok(serde_json::to_string(&line)?)
}

pub fn parse_example_line(line: &str, vocab: &Vocab) -> Result<TaggedExample> {
    let l: ExampleLine = serde_json::from_str(line)?;
    let ex = TaggedExample {
        tokens: l.tokens.iter().map(|n| token_id(vocab, n)).collect::<Result<_>>()?,
        position_ids: l.position_ids,
        predict_from: l.predict_from,
        answer: l.answer.as_deref().map(|n| token_id(vocab, n)).transpose()?,
        meta: l.meta,
    };
    ex.validate()?;
    Ok(ex)
}

/// Parses every nonblank line; errors carry the 1-based line number.
pub fn parse_examples(text: &str, vocab: &Vocab) -> Result<Vec<TaggedExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_example_line(l, vocab).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{far_pair, FarPairCoupling};
    use crate::ensembles::{counterexample, enumerate_support, Assumption, Ensemble};
    use crate::rng::seeded;
    use crate::taskgen::{gen_variable_assignment, TaskSpec};

    const SMALL: &str = r#"{
        "k": 1, "d": 1, "vocab": [1, 2], "mu": ["1/2", "0.5"],
        "qvoc": [[[2], "1"]],
        "qpos": {"table": [[3, [[[1], "0.25"], [[3], "0.75"]]]]},
        "gstar": [[[2], [1.0]]]
    }"#;

    #[test]
    fn parses_a_small_ensemble() {
        let ens = parse_ensemble(SMALL).unwrap();
        let atoms = enumerate_support(&ens, 3, 1000).unwrap();
        assert_eq!(atoms.len(), 8);
        assert!((atoms.iter().map(|a| a.prob).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ens.position_law(4).is_err());
    }

    #[test]
    fn rejects_malformed_ensembles() {
        for (from, to) in [
            (r#""1/2", "0.5""#, r#""1/2", "0.6""#),
            (r#""0.25""#, r#""-0.25""#),
            (r#"[[1], "0.25"]"#, r#"[[0], "0.25"]"#),
            (r#"[[3], "0.75"]"#, r#"[[4], "0.75"]"#),
            (r#"[[[2], [1.0]]]"#, r#"[[[2], [2.0]]]"#),
            (r#"[[[2], [1.0]]]"#, r#"[]"#),
            (r#""k": 1"#, r#""k": 1, "extra": 0"#),
            (r#""d": 1"#, r#""d": 100000"#),
            (r#""1/2""#, r#""1/0""#),
        ] {
            let text = SMALL.replacen(from, to, 1);
            assert_ne!(text, SMALL);
            assert!(parse_ensemble(&text).is_err(), "accepted {from} -> {to}");
        }
        assert!(parse_ensemble("").is_err());
        assert!(parse_ensemble("[]").is_err());
    }

    #[test]
    fn ensembles_survive_serialization() {
        for which in Assumption::ALL {
            let ce = counterexample(which, 4).unwrap();
            let text = ensemble_to_json(&ce.ensemble, 2..=8).unwrap();
            let back = parse_ensemble(&text).unwrap();
            for len in 2..=8 {
                let a = ce.ensemble.position_law(len).unwrap();
                let b = back.position_law(len).unwrap();
                assert_eq!(a.entries().len(), b.entries().len());
                for ((s, p), (t, q)) in a.entries().iter().zip(b.entries()) {
                    assert_eq!(s, t);
                    assert_eq!(p, q);
                }
            }
            assert_eq!(back.components().qvoc, ce.ensemble.components().qvoc);
        }
    }

    #[test]
    fn families_survive_serialization() {
        let ce = counterexample(Assumption::Locality, 4).unwrap();
        let text = family_to_json(&ce.family, 8, &[1, 2]).unwrap();
        let back = parse_family(&text).unwrap();
        assert_eq!(back.len(), ce.family.len());
        assert_eq!(back.member_name(0), ce.family.member_name(0));
        let mut x = vec![1u32; 8];
        for code in 0..256u32 {
            for (i, t) in x.iter_mut().enumerate() {
                *t = 1 + ((code >> i) & 1);
            }
            assert_eq!(back.evaluate_all(&x).unwrap(), ce.family.evaluate_all(&x).unwrap());
        }
        assert!(text.contains("\"-inf\"") || !text.contains("inf"));
    }

    #[test]
    fn score_strings() {
        let doc = r#"{"k": 1, "scores": [[[1], [1], "-inf"], [[2], [1], 0.5]], "values": [[[1], [0.25]]]}"#;
        let h = parse_hypothesis(doc).unwrap();
        assert_eq!(h.evaluate(&[1, 1]).unwrap(), LabelVec::scalar(0.25));
        assert!(parse_hypothesis(&doc.replace("-inf", "inf")).is_err());
        assert!(parse_hypothesis(&doc.replace("[[2], [1], 0.5]", "[[1], [1], 0.5]")).is_err());
        assert!(parse_hypothesis(&doc.replace("[[2], [1], 0.5]", "[[1, 2], [1], 0.5]")).is_err());
        let json = serde_json::to_string(&Score(f64::NEG_INFINITY)).unwrap();
        assert_eq!(json, "\"-inf\"");
    }

    #[test]
    fn coupled_laws_survive_serialization() {
        let fp = far_pair(FarPairCoupling::Transposition).unwrap();
        let ens = CoupledEnsemble::new(fp.ensemble, fp.coupling);
        let text = coupled_to_json(&ens, 3..=6).unwrap();
        let back = parse_coupled(&text).unwrap();
        for len in 3..=6 {
            assert_eq!(back.law(len).unwrap(), ens.law(len).unwrap());
        }
        // Marginal must match the base position law.
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut broken = v.clone();
        broken["coupling"][0][1][0][2] = "0.9".into();
        assert!(parse_coupled(&broken.to_string()).is_err());
        let mut broken = v;
        broken["coupling"][0][1][0][1] = serde_json::json!([1, 2]);
        assert!(parse_coupled(&broken.to_string()).is_err());
    }

    #[test]
    fn example_lines() {
        let spec = TaskSpec::VariableAssignment { len: 30, depth: 2, vars: 40 };
        let vocab = spec.vocab().unwrap();
        let ex = gen_variable_assignment(30, 2, 40, &mut seeded(3)).unwrap();
        let line = example_to_line(&ex, &vocab).unwrap();
        assert!(line.contains("\"<sep2>\""));
        assert_eq!(parse_example_line(&line, &vocab).unwrap(), ex);
        let text = format!("{line}\n\n{line}\n");
        assert_eq!(parse_examples(&text, &vocab).unwrap().len(), 2);
        assert!(parse_example_line(&line.replace("<sep2>", "<nope>"), &vocab).is_err());
        let short = r#"{"tokens": ["v1"], "position_ids": [], "predict_from": 0, "answer": null}"#;
        assert!(parse_example_line(short, &vocab).is_err());
        let past = r#"{"tokens": ["v1"], "position_ids": [1], "predict_from": 2, "answer": null}"#;
        assert!(parse_example_line(past, &vocab).is_err());
        assert!(parse_examples("{}\n", &vocab).unwrap_err().to_string().contains("line 1"));
    }
}
