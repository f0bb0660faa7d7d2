//! Sparse functional attention: score and value functions, families,
//! locality/relativity checkers and the single-head bridge.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hash;
use std::sync::Arc;

use crate::domain::{binomial, diameter, for_each_subset, LabelSpace, LabelVec, Subset, Token, TOL};
use crate::error::{Error, Result};

/// Anything that can sit at a sequence position.
pub trait Symbol: Clone + Eq + Ord + Hash + fmt::Debug + Send + Sync + 'static {}
impl<T> Symbol for T where T: Clone + Eq + Ord + Hash + fmt::Debug + Send + Sync + 'static {}

pub type ScoreRule<T> = Arc<dyn Fn(&[usize], &[T]) -> f64 + Send + Sync>;
pub type ContentRule<T> = Arc<dyn Fn(&[T]) -> f64 + Send + Sync>;
pub type ValueRule<T> = Arc<dyn Fn(&[T]) -> LabelVec + Send + Sync>;

#[derive(Clone)]
pub enum ScoreForm<T> {
    /// Entries keyed by (subset, tokens); everything else scores `default`.
    Table {
        entries: BTreeMap<(Vec<usize>, Vec<T>), f64>,
        default: f64,
    },
    /// Position-independent table keyed by tokens alone.
    ContentTable {
        entries: BTreeMap<Vec<T>, f64>,
        default: f64,
    },
    Rule(ScoreRule<T>),
    Content(ContentRule<T>),
}

/// g0: scores a size-k subset together with the tokens it selects.
#[derive(Clone)]
pub struct ScoreFn<T> {
    name: String,
    form: ScoreForm<T>,
    declared_locality: Option<usize>,
    declared_relative: bool,
}

impl<T: Symbol> ScoreFn<T> {
    pub fn rule(name: impl Into<String>, f: impl Fn(&[usize], &[T]) -> f64 + Send + Sync + 'static) -> Self {
        Self::from_form(name, ScoreForm::Rule(Arc::new(f)))
    }

    pub fn content(name: impl Into<String>, f: impl Fn(&[T]) -> f64 + Send + Sync + 'static) -> Self {
        Self::from_form(name, ScoreForm::Content(Arc::new(f)))
    }

    pub fn table(name: impl Into<String>, entries: BTreeMap<(Vec<usize>, Vec<T>), f64>, default: f64) -> Self {
        Self::from_form(name, ScoreForm::Table { entries, default })
    }

    pub fn content_table(name: impl Into<String>, entries: BTreeMap<Vec<T>, f64>, default: f64) -> Self {
        Self::from_form(name, ScoreForm::ContentTable { entries, default })
    }

    pub fn from_form(name: impl Into<String>, form: ScoreForm<T>) -> Self {
        ScoreFn { name: name.into(), form, declared_locality: None, declared_relative: false }
    }

    pub fn declare_local(mut self, window: usize) -> Self {
        self.declared_locality = Some(window);
        self
    }

    pub fn declare_relative(mut self) -> Self {
        self.declared_relative = true;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn form(&self) -> &ScoreForm<T> {
        &self.form
    }

    pub fn declared_locality(&self) -> Option<usize> {
        self.declared_locality
    }

    pub fn declared_relative(&self) -> bool {
        self.declared_relative
    }

    pub fn is_position_independent(&self) -> bool {
        matches!(self.form, ScoreForm::Content(_) | ScoreForm::ContentTable { .. })
    }

    pub fn score(&self, s: &[usize], x: &[T]) -> f64 {
        match &self.form {
            ScoreForm::Table { entries, default } => *entries.get(&(s.to_vec(), x.to_vec())).unwrap_or(default),
            ScoreForm::ContentTable { entries, default } => *entries.get(x).unwrap_or(default),
            ScoreForm::Rule(f) => f(s, x),
            ScoreForm::Content(f) => f(x),
        }
    }

    /// Score of a position-independent function; `None` otherwise.
    pub fn content_score(&self, x: &[T]) -> Option<f64> {
        match &self.form {
            ScoreForm::ContentTable { entries, default } => Some(*entries.get(x).unwrap_or(default)),
            ScoreForm::Content(f) => Some(f(x)),
            _ => None,
        }
    }

    /// Table form over subsets of `[max_len]` and words over `alphabet`.
    /// Entries scoring −∞ are left to the default.
    pub fn tabulate(&self, max_len: usize, k: usize, alphabet: &[T]) -> Self {
        let form = if self.is_position_independent() {
            let mut entries = BTreeMap::new();
            for_each_word(alphabet, k, |x| {
                let v = self.content_score(x).unwrap_or(f64::NEG_INFINITY);
                if v != f64::NEG_INFINITY {
                    entries.insert(x.to_vec(), v);
                }
            });
            ScoreForm::ContentTable { entries, default: f64::NEG_INFINITY }
        } else {
            let mut entries = BTreeMap::new();
            let _ = for_each_subset::<()>(max_len, k, |s| {
                for_each_word(alphabet, k, |x| {
                    let v = self.score(s, x);
                    if v != f64::NEG_INFINITY {
                        entries.insert((s.to_vec(), x.to_vec()), v);
                    }
                });
                Ok(())
            });
            ScoreForm::Table { entries, default: f64::NEG_INFINITY }
        };
        ScoreFn {
            name: self.name.clone(),
            form,
            declared_locality: self.declared_locality,
            declared_relative: self.declared_relative,
        }
    }
}

impl<T> fmt::Debug for ScoreFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreFn").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub enum ValueForm<T> {
    Table { entries: BTreeMap<Vec<T>, LabelVec>, default: Option<LabelVec> },
    Rule(ValueRule<T>),
}

/// g1: maps the selected tokens to a label.
#[derive(Clone)]
pub struct ValueFn<T> {
    name: String,
    form: ValueForm<T>,
}

impl<T: Symbol> ValueFn<T> {
    pub fn rule(name: impl Into<String>, f: impl Fn(&[T]) -> LabelVec + Send + Sync + 'static) -> Self {
        ValueFn { name: name.into(), form: ValueForm::Rule(Arc::new(f)) }
    }

    pub fn table(name: impl Into<String>, entries: BTreeMap<Vec<T>, LabelVec>, default: Option<LabelVec>) -> Self {
        ValueFn { name: name.into(), form: ValueForm::Table { entries, default } }
    }

    pub fn constant(name: impl Into<String>, y: LabelVec) -> Self {
        Self::rule(name, move |_| y.clone())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn form(&self) -> &ValueForm<T> {
        &self.form
    }

    pub fn value(&self, x: &[T]) -> Result<LabelVec> {
        match &self.form {
            ValueForm::Table { entries, default } => entries
                .get(x)
                .or(default.as_ref())
                .cloned()
                .ok_or_else(|| Error::MissingEntry(format!("{x:?} in value table `{}`", self.name))),
            ValueForm::Rule(f) => Ok(f(x)),
        }
    }

    pub fn tabulate(&self, k: usize, alphabet: &[T]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut err = None;
        for_each_word(alphabet, k, |x| match self.value(x) {
            Ok(y) => {
                entries.insert(x.to_vec(), y);
            }
            Err(e) => err = Some(e),
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(ValueFn::table(self.name.clone(), entries, None))
    }

    /// Checks that every output over `alphabet^k` lies in `space`.
    pub fn check_range(&self, k: usize, alphabet: &[T], space: &LabelSpace) -> Result<()> {
        let mut out = Ok(());
        for_each_word(alphabet, k, |x| {
            if out.is_ok() {
                out = self.value(x).and_then(|y| space.check(&y));
            }
        });
        out
    }
}

impl<T> fmt::Debug for ValueFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueFn").field("name", &self.name).finish_non_exhaustive()
    }
}

/// h_{g0,g1}.
#[derive(Clone, Debug)]
pub struct FunctionalAttention<T> {
    pub g0: ScoreFn<T>,
    pub g1: ValueFn<T>,
    pub k: usize,
}

impl<T: Symbol> FunctionalAttention<T> {
    pub fn new(g0: ScoreFn<T>, g1: ValueFn<T>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("sparsity must be positive"));
        }
        Ok(FunctionalAttention { g0, g1, k })
    }

    pub fn evaluate(&self, x: &[T]) -> Result<LabelVec> {
        let w = AttentionWeights::compute(&self.g0, x, self.k)?;
        w.combine(&self.g1, x)
    }

    pub fn name(&self) -> String {
        format!("h[{},{}]", self.g0.name(), self.g1.name())
    }
}

/// Softmax weights of one score function over every k-subset of a sequence.
pub struct AttentionWeights {
    k: usize,
    len: usize,
    /// Flattened positions of the finite-score subsets, `k` per subset.
    picks: Vec<usize>,
    weights: Vec<f64>,
    total: f64,
}

impl AttentionWeights {
    pub fn compute<T: Symbol>(g0: &ScoreFn<T>, x: &[T], k: usize) -> Result<Self> {
        let len = x.len();
        if len < k {
            return Err(Error::TooShort { len, k });
        }
        let mut picks = Vec::new();
        let mut scores = Vec::new();
        let mut buf: Vec<T> = Vec::with_capacity(k);
        let _ = for_each_subset::<()>(len, k, |s| {
            gather(x, s, &mut buf);
            let v = g0.score(s, &buf);
            if v != f64::NEG_INFINITY {
                picks.extend_from_slice(s);
                scores.push(v);
            }
            Ok(())
        });
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total = weights.iter().sum();
        Ok(AttentionWeights { k, len, picks, weights, total })
    }

    /// True when every subset scored −∞ and the uniform mean applies.
    pub fn is_uniform(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn finite_subsets(&self) -> impl Iterator<Item = &[usize]> {
        self.picks.chunks(self.k)
    }

    pub fn combine<T: Symbol>(&self, g1: &ValueFn<T>, x: &[T]) -> Result<LabelVec> {
        let mut buf: Vec<T> = Vec::with_capacity(self.k);
        let mut acc: Vec<f64> = Vec::new();
        let mut add = |y: LabelVec, w: f64| -> Result<()> {
            if acc.is_empty() {
                acc = vec![0.0; y.dim()];
            } else if acc.len() != y.dim() {
                return Err(Error::DimensionMismatch { left: acc.len(), right: y.dim() });
            }
            for (a, c) in acc.iter_mut().zip(&y.0) {
                *a += w * c;
            }
            Ok(())
        };
        if self.is_uniform() {
            for_each_subset(self.len, self.k, |s| {
                gather(x, s, &mut buf);
                add(g1.value(&buf)?, 1.0)
            })?;
            let n = binomial(self.len, self.k) as f64;
            return Ok(LabelVec(acc.into_iter().map(|a| a / n).collect()));
        }
        for (s, w) in self.picks.chunks(self.k).zip(&self.weights) {
            gather(x, s, &mut buf);
            add(g1.value(&buf)?, *w)?;
        }
        Ok(LabelVec(acc.into_iter().map(|a| a / self.total).collect()))
    }
}

pub(crate) fn gather<T: Clone>(x: &[T], s: &[usize], buf: &mut Vec<T>) {
    buf.clear();
    buf.extend(s.iter().map(|&i| x[i - 1].clone()));
}

/// Visits every word of length `k` over `alphabet` in odometer order.
pub fn for_each_word<T: Clone>(alphabet: &[T], k: usize, mut f: impl FnMut(&[T])) {
    if alphabet.is_empty() {
        return;
    }
    let mut idx = vec![0usize; k];
    let mut word: Vec<T> = vec![alphabet[0].clone(); k];
    loop {
        f(&word);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < alphabet.len() {
                word[i] = alphabet[idx[i]].clone();
                break;
            }
            idx[i] = 0;
            word[i] = alphabet[0].clone();
        }
    }
}

/// H(G0, G1), enumerated score-major: index = i0 * |G1| + i1.
#[derive(Clone, Debug)]
pub struct HypothesisFamily<T> {
    k: usize,
    score_fns: Vec<ScoreFn<T>>,
    value_fns: Vec<ValueFn<T>>,
}

impl<T: Symbol> HypothesisFamily<T> {
    pub fn new(k: usize, score_fns: Vec<ScoreFn<T>>, value_fns: Vec<ValueFn<T>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("sparsity must be positive"));
        }
        if score_fns.is_empty() || value_fns.is_empty() {
            return Err(Error::param("hypothesis family must be nonempty"));
        }
        Ok(HypothesisFamily { k, score_fns, value_fns })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.score_fns.len() * self.value_fns.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn score_fns(&self) -> &[ScoreFn<T>] {
        &self.score_fns
    }

    pub fn value_fns(&self) -> &[ValueFn<T>] {
        &self.value_fns
    }

    pub fn split_index(&self, index: usize) -> (usize, usize) {
        (index / self.value_fns.len(), index % self.value_fns.len())
    }

    pub fn member(&self, index: usize) -> FunctionalAttention<T> {
        let (i0, i1) = self.split_index(index);
        FunctionalAttention { g0: self.score_fns[i0].clone(), g1: self.value_fns[i1].clone(), k: self.k }
    }

    pub fn members(&self) -> impl Iterator<Item = FunctionalAttention<T>> + '_ {
        (0..self.len()).map(|i| self.member(i))
    }

    pub fn member_name(&self, index: usize) -> String {
        let (i0, i1) = self.split_index(index);
        format!("h[{},{}]", self.score_fns[i0].name(), self.value_fns[i1].name())
    }

    /// Outputs of every member on `x`, in member order. Scores are computed
    /// once per score function.
    pub fn evaluate_all(&self, x: &[T]) -> Result<Vec<LabelVec>> {
        let mut out = Vec::with_capacity(self.len());
        for g0 in &self.score_fns {
            let w = AttentionWeights::compute(g0, x, self.k)?;
            for g1 in &self.value_fns {
                out.push(w.combine(g1, x)?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalityCheck<T> {
    pub holds: bool,
    pub witness: Option<(Subset, Vec<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelativityCheck<T> {
    pub holds: bool,
    pub witness: Option<(Subset, i64, Vec<T>)>,
}

fn check_budget(needed: u128, budget: u128) -> Result<()> {
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    Ok(())
}

fn pow(base: usize, exp: usize) -> u128 {
    (0..exp).fold(1u128, |a, _| a.saturating_mul(base as u128))
}

/// Exhaustively verifies that `g0` is −∞ on every subset of `[max_len]`
/// wider than `window`.
pub fn check_local<T: Symbol>(
    g0: &ScoreFn<T>,
    k: usize,
    window: usize,
    max_len: usize,
    alphabet: &[T],
    budget: u128,
) -> Result<LocalityCheck<T>> {
    check_budget(binomial(max_len, k).saturating_mul(pow(alphabet.len(), k)), budget)?;
    let mut witness = None;
    let _ = for_each_subset::<()>(max_len, k, |s| {
        if diameter(s) <= window {
            return Ok(());
        }
        for_each_word(alphabet, k, |x| {
            if witness.is_none() && g0.score(s, x) != f64::NEG_INFINITY {
                witness = Some((Subset::new(s.to_vec()).expect("walk yields subsets"), x.to_vec()));
            }
        });
        if witness.is_some() {
            Err(())
        } else {
            Ok(())
        }
    });
    Ok(LocalityCheck { holds: witness.is_none(), witness })
}

fn same_score(a: f64, b: f64) -> bool {
    a == b || (a.is_finite() && b.is_finite() && (a - b).abs() <= TOL)
}

/// Exhaustively verifies `g0(S, x) = g0(S + Δ, x)` for all shifts inside
/// `[max_len]`.
pub fn check_relative<T: Symbol>(
    g0: &ScoreFn<T>,
    k: usize,
    max_len: usize,
    alphabet: &[T],
    budget: u128,
) -> Result<RelativityCheck<T>> {
    check_budget(binomial(max_len, k).saturating_mul(pow(alphabet.len(), k)).saturating_mul(max_len as u128), budget)?;
    let mut witness = None;
    let mut shifted = vec![0usize; k];
    let _ = for_each_subset::<()>(max_len, k, |s| {
        let room = max_len - s[k - 1];
        for delta in 1..=room {
            for (d, &i) in shifted.iter_mut().zip(s) {
                *d = i + delta;
            }
            for_each_word(alphabet, k, |x| {
                if witness.is_none() && !same_score(g0.score(s, x), g0.score(&shifted, x)) {
                    witness = Some((Subset::new(s.to_vec()).expect("walk yields subsets"), delta as i64, x.to_vec()));
                }
            });
            if witness.is_some() {
                return Err(());
            }
        }
        Ok(())
    });
    Ok(RelativityCheck { holds: witness.is_none(), witness })
}

/// Parameters of one softmax attention head. `K, Q, V` are `h×d`, `O` is
/// `d×h`, `W_embed` is `d×|V|`, rows stored as vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHeadParams {
    pub key: Vec<Vec<f64>>,
    pub query: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
    pub out: Vec<Vec<f64>>,
    pub embed: Vec<Vec<f64>>,
    pub h_query: Vec<f64>,
}

impl AttentionHeadParams {
    pub fn zeros(d: usize, h: usize, vocab: usize) -> Self {
        AttentionHeadParams {
            key: vec![vec![0.0; d]; h],
            query: vec![vec![0.0; d]; h],
            value: vec![vec![0.0; d]; h],
            out: vec![vec![0.0; h]; d],
            embed: vec![vec![0.0; vocab]; d],
            h_query: vec![0.0; d],
        }
    }

    pub fn model_dim(&self) -> usize {
        self.h_query.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        let h = self.key.len();
        let shape = |m: &Vec<Vec<f64>>, rows: usize, cols: usize| m.len() == rows && m.iter().all(|r| r.len() == cols);
        let nv = self.vocab_size();
        if d == 0
            || h == 0
            || !shape(&self.key, h, d)
            || !shape(&self.query, h, d)
            || !shape(&self.value, h, d)
            || !shape(&self.out, d, h)
            || !shape(&self.embed, d, nv)
        {
            return Err(Error::param("inconsistent attention head dimensions"));
        }
        Ok(())
    }

    fn embedding(&self, t: Token) -> Result<Vec<f64>> {
        let t = t as usize;
        if t >= self.vocab_size() {
            return Err(Error::UnknownToken(t.to_string()));
        }
        Ok(self.embed.iter().map(|row| row[t]).collect())
    }
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `O · Σ_t α_t v_t` with `α = softmax(<q, k_t>)`.
pub fn attention_head(p: &AttentionHeadParams, x: &[Token]) -> Result<LabelVec> {
    p.validate()?;
    if x.is_empty() {
        return Err(Error::TooShort { len: 0, k: 1 });
    }
    let q = matvec(&p.query, &p.h_query);
    let mut logits = Vec::with_capacity(x.len());
    let mut values = Vec::with_capacity(x.len());
    for &t in x {
        let e = p.embedding(t)?;
        logits.push(dot(&q, &matvec(&p.key, &e)));
        values.push(matvec(&p.value, &e));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut mix = vec![0.0; p.key.len()];
    for (wt, v) in w.iter().zip(&values) {
        for (m, c) in mix.iter_mut().zip(v) {
            *m += wt / z * c;
        }
    }
    Ok(LabelVec(matvec(&p.out, &mix)))
}

/// The 1-sparse functional attention hypothesis computing the same head.
pub fn head_to_hypothesis(p: &AttentionHeadParams) -> Result<FunctionalAttention<Token>> {
    p.validate()?;
    let q = matvec(&p.query, &p.h_query);
    let mut scores = Vec::with_capacity(p.vocab_size());
    let mut outputs = Vec::with_capacity(p.vocab_size());
    for t in 0..p.vocab_size() as Token {
        let e = p.embedding(t)?;
        scores.push(dot(&q, &matvec(&p.key, &e)));
        outputs.push(LabelVec(matvec(&p.out, &matvec(&p.value, &e))));
    }
    let g0 = ScoreFn::content("head_score", move |x: &[Token]| {
        scores.get(x[0] as usize).copied().unwrap_or(f64::NEG_INFINITY)
    })
    .declare_relative();
    let dim = p.model_dim();
    let g1 = ValueFn::rule("head_value", move |x: &[Token]| {
        outputs.get(x[0] as usize).cloned().unwrap_or_else(|| LabelVec::zeros(dim))
    });
    FunctionalAttention::new(g0, g1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_value(name: &str, f: impl Fn(&[Token]) -> f64 + Send + Sync + 'static) -> ValueFn<Token> {
        ValueFn::rule(name, move |x| LabelVec::scalar(f(x)))
    }

    #[test]
    fn single_finite_subset_collapses() {
        let g0 = ScoreFn::rule("only_23", |s: &[usize], _: &[Token]| if s == [2, 3] { 0.7 } else { f64::NEG_INFINITY });
        let g1 = scalar_value("first_over_10", |x| x[0] as f64 / 10.0);
        let h = FunctionalAttention::new(g0, g1, 2).unwrap();
        let y = h.evaluate(&[1, 4, 9, 2]).unwrap();
        assert!((y.0[0] - 0.4).abs() < TOL);
    }

    #[test]
    fn two_equal_scores_average() {
        let g0 = ScoreFn::rule("two", |s: &[usize], _: &[Token]| if s[0] <= 2 { 1.3 } else { f64::NEG_INFINITY });
        let g1 = scalar_value("pos", |x| if x[0] == 1 { 1.0 } else { 0.0 });
        let h = FunctionalAttention::new(g0, g1, 1).unwrap();
        let y = h.evaluate(&[0, 1, 0]).unwrap();
        assert!((y.0[0] - 0.5).abs() < TOL);
    }

    #[test]
    fn all_neg_inf_falls_back_to_mean() {
        let g0 = ScoreFn::content("never", |_: &[Token]| f64::NEG_INFINITY);
        let g1 = scalar_value("tenths", |x| x[0] as f64 / 10.0);
        let h = FunctionalAttention::new(g0, g1, 1).unwrap();
        let y = h.evaluate(&[0, 3, 6]).unwrap();
        assert!((y.0[0] - 0.3).abs() < TOL);
    }

    #[test]
    fn short_sequence_is_an_error() {
        let g0 = ScoreFn::content("zero", |_: &[Token]| 0.0);
        let h = FunctionalAttention::new(g0, scalar_value("c", |_| 0.0), 3).unwrap();
        assert_eq!(h.evaluate(&[1, 2]), Err(Error::TooShort { len: 2, k: 3 }));
    }

    #[test]
    fn family_evaluation_matches_members() {
        let fam = HypothesisFamily::new(
            2,
            vec![
                ScoreFn::rule(
                    "near",
                    |s: &[usize], x: &[Token]| if diameter(s) == 1 { x[0] as f64 } else { f64::NEG_INFINITY },
                ),
                ScoreFn::content("sum", |x: &[Token]| (x[0] + x[1]) as f64 / 3.0),
            ],
            vec![scalar_value("a", |x| x[1] as f64 / 5.0), scalar_value("b", |_| 0.25)],
        )
        .unwrap();
        let x = [1, 4, 2, 0, 3];
        let all = fam.evaluate_all(&x).unwrap();
        for (i, y) in all.iter().enumerate() {
            assert_eq!(*y, fam.member(i).evaluate(&x).unwrap());
        }
        assert_eq!(fam.member_name(1), "h[near,b]");
        assert_eq!(fam.split_index(2), (1, 0));
    }

    #[test]
    fn locality_checker() {
        let wide =
            ScoreFn::rule("wide", |s: &[usize], _: &[Token]| if diameter(s) >= 4 { 0.0 } else { f64::NEG_INFINITY });
        let r = check_local(&wide, 2, 2, 6, &[1, 2], u128::MAX).unwrap();
        assert!(!r.holds);
        assert_eq!(r.witness.unwrap().0, Subset::new(vec![1, 5]).unwrap());
        let never = ScoreFn::content("never", |_: &[Token]| f64::NEG_INFINITY);
        assert!(check_local(&never, 2, 1, 6, &[1, 2], u128::MAX).unwrap().holds);
        assert!(matches!(check_local(&never, 2, 1, 60, &[1, 2], 10), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn relativity_checker() {
        let diam_only = ScoreFn::rule("diam", |s: &[usize], x: &[Token]| diameter(s) as f64 + x[0] as f64);
        assert!(check_relative(&diam_only, 2, 7, &[1, 2], u128::MAX).unwrap().holds);

        let mut entries = BTreeMap::new();
        for s in crate::domain::subsets_k(6, 2) {
            for x in [[1u32, 1], [1, 2], [2, 1], [2, 2]] {
                entries.insert((s.indices().to_vec(), x.to_vec()), diameter(s.indices()) as f64);
            }
        }
        entries.insert((vec![3, 5], vec![2, 1]), 7.0);
        let perturbed = ScoreFn::table("perturbed", entries, f64::NEG_INFINITY);
        let r = check_relative(&perturbed, 2, 6, &[1, 2], u128::MAX).unwrap();
        assert!(!r.holds);
        let (s, delta, x) = r.witness.unwrap();
        assert_eq!(x, vec![2, 1]);
        let moved = s.shift(delta).unwrap();
        assert!(s == Subset::new(vec![3, 5]).unwrap() || moved == Subset::new(vec![3, 5]).unwrap());
    }

    #[test]
    fn tabulated_forms_agree() {
        let g0 = ScoreFn::rule(
            "r",
            |s: &[usize], x: &[Token]| if s[1] - s[0] == 1 && x[0] == 2 { 0.5 } else { f64::NEG_INFINITY },
        );
        let t = g0.tabulate(5, 2, &[1, 2]);
        let _ = for_each_subset::<()>(5, 2, |s| {
            for_each_word(&[1u32, 2], 2, |x| assert_eq!(g0.score(s, x), t.score(s, x)));
            Ok(())
        });
        let c = ScoreFn::content("c", |x: &[Token]| x[0] as f64);
        assert!(c.tabulate(5, 2, &[1, 2]).is_position_independent());
    }

    #[test]
    fn words_in_odometer_order() {
        let mut seen = Vec::new();
        for_each_word(&['a', 'b'], 2, |w| seen.push(w.iter().collect::<String>()));
        assert_eq!(seen, vec!["aa", "ab", "ba", "bb"]);
    }

    #[test]
    fn zero_head_is_zero() {
        let p = AttentionHeadParams::zeros(3, 2, 4);
        let h = head_to_hypothesis(&p).unwrap();
        assert_eq!(h.evaluate(&[0, 3, 1]).unwrap(), LabelVec::zeros(3));
        assert_eq!(attention_head(&p, &[2]).unwrap(), LabelVec::zeros(3));
    }

    #[test]
    fn scalar_head_by_hand() {
        // W maps token 0 to 0 and token 1 to 1; logits are 0 and 1.
        let p = AttentionHeadParams {
            key: vec![vec![1.0]],
            query: vec![vec![1.0]],
            value: vec![vec![1.0]],
            out: vec![vec![1.0]],
            embed: vec![vec![0.0, 1.0]],
            h_query: vec![1.0],
        };
        let e = std::f64::consts::E;
        let expect = e / (1.0 + e);
        assert!((attention_head(&p, &[0, 1]).unwrap().0[0] - expect).abs() < TOL);
        let h = head_to_hypothesis(&p).unwrap();
        assert!((h.evaluate(&[0, 1]).unwrap().0[0] - expect).abs() < TOL);
    }

    #[test]
    fn single_token_and_repeats() {
        let mut rng = seeded(3);
        let mut p = AttentionHeadParams::zeros(2, 3, 5);
        for m in [&mut p.key, &mut p.query, &mut p.value, &mut p.out, &mut p.embed] {
            for row in m.iter_mut() {
                for c in row.iter_mut() {
                    *c = rng.gen_range(-1.0..1.0);
                }
            }
        }
        p.h_query = vec![0.3, -0.8];
        let one = attention_head(&p, &[4]).unwrap();
        let direct = matvec(&p.out, &matvec(&p.value, &p.embedding(4).unwrap()));
        for (a, b) in one.0.iter().zip(&direct) {
            assert!((a - b).abs() < TOL);
        }
        let many = attention_head(&p, &[4, 4, 4, 4]).unwrap();
        for (a, b) in one.0.iter().zip(&many.0) {
            assert!((a - b).abs() < TOL);
        }
    }

    #[test]
    fn bad_head_dimensions_rejected() {
        let mut p = AttentionHeadParams::zeros(2, 2, 3);
        p.out = vec![vec![0.0; 2]];
        assert!(p.validate().is_err());
        assert!(attention_head(&AttentionHeadParams::zeros(2, 2, 3), &[3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(
            raw in prop::collection::vec(prop::option::of(-5.0..5.0f64), 10),
            vals in prop::collection::vec(0.0..1.0f64, 5),
            c in -50.0..50.0f64,
        ) {
            let score = move |shift: f64| {
                let raw = raw.clone();
                ScoreFn::rule("t", move |s: &[usize], _: &[Token]| {
                    let i = (s[0] - 1) * 2 + (s[1] - s[0]) % 2;
                    raw[i % raw.len()].map_or(f64::NEG_INFINITY, |v| v + shift)
                })
            };
            let vals2 = vals.clone();
            let g1 = ValueFn::rule("v", move |x: &[Token]| LabelVec::scalar(vals2[x[1] as usize]));
            let x: Vec<Token> = (0..5).collect();
            let a = FunctionalAttention::new(score(0.0), g1.clone(), 2).unwrap().evaluate(&x).unwrap();
            let b = FunctionalAttention::new(score(c), g1, 2).unwrap().evaluate(&x).unwrap();
            prop_assert!((a.0[0] - b.0[0]).abs() <= TOL);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a.0[0] >= lo - TOL && a.0[0] <= hi + TOL);
        }
    }
}
