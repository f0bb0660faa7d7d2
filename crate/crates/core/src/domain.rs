//! Tokens, vocabularies, label vectors, losses and size-k subsets.

use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for exact-arithmetic comparisons.
pub const TOL: f64 = 1e-9;

pub type Token = u32;
pub type TokenSeq = Vec<Token>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Special {
    Bos,
    Sep,
    Sep1,
    Sep2,
    Assign,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub id: Token,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Special>,
}

/// Ordered finite token set. Ids and names are unique; each special role is
/// held by at most one token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VocabEntry>", into = "Vec<VocabEntry>")]
pub struct Vocab {
    entries: Vec<VocabEntry>,
}

impl Vocab {
    pub fn new(mut entries: Vec<VocabEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        if entries.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::param("duplicate token id"));
        }
        let names: std::collections::BTreeSet<_> = entries.iter().map(|e| &e.name).collect();
        if names.len() != entries.len() {
            return Err(Error::param("duplicate token name"));
        }
        let mut roles = BTreeMap::new();
        for e in &entries {
            if let Some(r) = e.role {
                if roles.insert(r, e.id).is_some() {
                    return Err(Error::param(format!("role {r:?} assigned twice")));
                }
            }
        }
        Ok(Vocab { entries })
    }

    /// Content tokens named by their decimal id.
    pub fn numeric(ids: impl IntoIterator<Item = Token>) -> Result<Self> {
        Self::new(ids.into_iter().map(|id| VocabEntry { id, name: id.to_string(), role: None }).collect())
    }

    /// Dense ids `0..n` in the order given, with optional roles.
    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = (S, Option<Special>)>) -> Result<Self> {
        Self::new(
            names
                .into_iter()
                .enumerate()
                .map(|(i, (name, role))| VocabEntry { id: i as Token, name: name.into(), role })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = Token> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn content_ids(&self) -> impl Iterator<Item = Token> + '_ {
        self.entries.iter().filter(|e| e.role.is_none()).map(|e| e.id)
    }

    pub fn contains(&self, t: Token) -> bool {
        self.entries.binary_search_by_key(&t, |e| e.id).is_ok()
    }

    pub fn name(&self, t: Token) -> Option<&str> {
        self.entries.binary_search_by_key(&t, |e| e.id).ok().map(|i| self.entries[i].name.as_str())
    }

    pub fn lookup(&self, name: &str) -> Option<Token> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn special(&self, role: Special) -> Option<Token> {
        self.entries.iter().find(|e| e.role == Some(role)).map(|e| e.id)
    }

    pub fn validate_seq(&self, seq: &[Token]) -> Result<()> {
        match seq.iter().find(|t| !self.contains(**t)) {
            Some(t) => Err(Error::UnknownToken(t.to_string())),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<VocabEntry>> for Vocab {
    type Error = Error;
    fn try_from(v: Vec<VocabEntry>) -> Result<Self> {
        Vocab::new(v)
    }
}

impl From<Vocab> for Vec<VocabEntry> {
    fn from(v: Vocab) -> Self {
        v.entries
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().fold(0.0, |m, c| m.max(c.abs())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVec(pub Vec<f64>);

impl LabelVec {
    pub fn scalar(v: f64) -> Self {
        LabelVec(vec![v])
    }

    pub fn zeros(d: usize) -> Self {
        LabelVec(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn loss_with(norm: Norm, y: &LabelVec, y2: &LabelVec) -> Result<f64> {
    if y.dim() != y2.dim() {
        return Err(Error::DimensionMismatch { left: y.dim(), right: y2.dim() });
    }
    let diff: Vec<f64> = y.0.iter().zip(&y2.0).map(|(a, b)| a - b).collect();
    Ok(norm.of(&diff))
}

/// Loss under the default Euclidean norm.
pub fn loss(y: &LabelVec, y2: &LabelVec) -> Result<f64> {
    loss_with(Norm::L2, y, y2)
}

/// Label set Y: the hypercube `[0, side]^d` with side chosen so that the
/// diameter under `norm` is exactly 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSpace {
    pub dim: usize,
    pub norm: Norm,
}

impl LabelSpace {
    pub fn new(dim: usize, norm: Norm) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("label dimension must be positive"));
        }
        Ok(LabelSpace { dim, norm })
    }

    pub fn unit_interval() -> Self {
        LabelSpace { dim: 1, norm: Norm::L2 }
    }

    pub fn side(&self) -> f64 {
        match self.norm {
            Norm::L2 => 1.0 / (self.dim as f64).sqrt(),
            Norm::Linf => 1.0,
        }
    }

    pub fn contains(&self, y: &LabelVec) -> bool {
        let s = self.side();
        y.dim() == self.dim && y.0.iter().all(|c| *c >= -TOL && *c <= s + TOL)
    }

    pub fn check(&self, y: &LabelVec) -> Result<()> {
        if y.dim() != self.dim {
            return Err(Error::DimensionMismatch { left: y.dim(), right: self.dim });
        }
        if !self.contains(y) {
            return Err(Error::LabelOutOfRange { label: y.0.clone() });
        }
        Ok(())
    }

    pub fn centroid(&self) -> LabelVec {
        LabelVec(vec![self.side() / 2.0; self.dim])
    }

    pub fn loss(&self, y: &LabelVec, y2: &LabelVec) -> Result<f64> {
        loss_with(self.norm, y, y2)
    }
}

/// Strictly increasing list of positive (1-based) indices.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSubset { indices: vec![], reason: "empty" });
        }
        if indices[0] == 0 {
            return Err(Error::InvalidSubset {
                indices: indices.iter().map(|&i| i as i64).collect(),
                reason: "indices are 1-based",
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSubset {
                indices: indices.iter().map(|&i| i as i64).collect(),
                reason: "not strictly increasing",
            });
        }
        Ok(Subset(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> usize {
        self.0[0]
    }

    pub fn last(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    pub fn diameter(&self) -> usize {
        self.last() - self.first()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn within(&self, len: usize) -> bool {
        self.last() <= len
    }

    pub fn shift(&self, delta: i64) -> Result<Self> {
        shift_subset(self, delta)
    }
}

impl TryFrom<Vec<usize>> for Subset {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Subset::new(v)
    }
}

impl From<Subset> for Vec<usize> {
    fn from(s: Subset) -> Self {
        s.0
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(","))
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Every k-subset of `{1..len}` in lexicographic order.
pub fn subsets_k(len: usize, k: usize) -> impl Iterator<Item = Subset> {
    (1..=len).combinations(k).map(Subset)
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Allocation-free lexicographic walk over the k-subsets of `{1..len}`.
pub fn for_each_subset<E>(
    len: usize,
    k: usize,
    mut f: impl FnMut(&[usize]) -> std::result::Result<(), E>,
) -> std::result::Result<(), E> {
    if k == 0 || k > len {
        return Ok(());
    }
    let mut idx: Vec<usize> = (1..=k).collect();
    loop {
        f(&idx)?;
        let mut i = k;
        while i > 0 && idx[i - 1] == len - k + i {
            i -= 1;
        }
        if i == 0 {
            return Ok(());
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn shift_subset(s: &Subset, delta: i64) -> Result<Subset> {
    let mut out = Vec::with_capacity(s.len());
    for &i in s.indices() {
        let v = i as i64 + delta;
        if v < 1 {
            return Err(Error::ShiftUnderflow { index: i, delta });
        }
        out.push(v as usize);
    }
    Ok(Subset(out))
}

pub fn diameter(indices: &[usize]) -> usize {
    indices[indices.len() - 1] - indices[0]
}

/// Parses a probability written as a decimal (`"0.25"`) or a ratio (`"1/3"`).
pub fn parse_prob(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| Error::Parse(format!("bad probability `{s}`")))?;
            let d: f64 = d.trim().parse().map_err(|_| Error::Parse(format!("bad probability `{s}`")))?;
            if d == 0.0 {
                return Err(Error::Parse(format!("zero denominator in `{s}`")));
            }
            n / d
        }
        None => s.parse().map_err(|_| Error::Parse(format!("bad probability `{s}`")))?,
    };
    if !(0.0..=1.0 + TOL).contains(&v) || !v.is_finite() {
        return Err(Error::BadProbability { what: s.to_string(), value: v });
    }
    Ok(v)
}

pub fn format_prob(p: f64) -> String {
    format!("{p}")
}

pub(crate) fn check_normalized(what: &str, probs: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::BadProbability { what: what.to_string(), value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > TOL {
        return Err(Error::NotNormalized { what: what.to_string(), sum });
    }
    Ok(())
}
