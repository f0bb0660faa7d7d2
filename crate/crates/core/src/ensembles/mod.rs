//! Planted-correlation ensembles: sampling, exact support enumeration and
//! coverage ratios.

mod counterexamples;

pub use counterexamples::{adversarial_extension, counterexample, AdversarialExtension, Assumption, Counterexample};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{check_normalized, LabelSpace, LabelVec, Subset, Token, TOL};
use crate::error::{Error, Result};
use crate::hypotheses::{Symbol, ValueFn};
use crate::rng::LabRng;

/// Law of the planted set at one length: distinct subsets with positive mass,
/// sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct PosLaw {
    entries: Vec<(Subset, f64)>,
}

impl PosLaw {
    /// Merges repeated subsets and drops zero-mass entries.
    pub fn new(entries: impl IntoIterator<Item = (Subset, f64)>) -> Self {
        let mut merged: BTreeMap<Subset, f64> = BTreeMap::new();
        for (s, p) in entries {
            *merged.entry(s).or_insert(0.0) += p;
        }
        PosLaw { entries: merged.into_iter().filter(|(_, p)| *p != 0.0).collect() }
    }

    pub fn uniform(sets: impl IntoIterator<Item = Subset>) -> Self {
        let sets: Vec<Subset> = sets.into_iter().collect();
        let p = 1.0 / sets.len() as f64;
        Self::new(sets.into_iter().map(|s| (s, p)))
    }

    pub fn point(s: Subset) -> Self {
        Self::new([(s, 1.0)])
    }

    pub fn entries(&self) -> &[(Subset, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, s: &Subset) -> f64 {
        self.entries.binary_search_by(|(t, _)| t.cmp(s)).map_or(0.0, |i| self.entries[i].1)
    }

    pub fn validate(&self, len: usize, k: usize) -> Result<()> {
        for (s, p) in &self.entries {
            if s.len() != k || !s.within(len) {
                return Err(Error::InvalidSubset {
                    indices: s.indices().iter().map(|&i| i as i64).collect(),
                    reason: "outside Sets([len], k)",
                });
            }
            if !(0.0..=1.0 + TOL).contains(p) {
                return Err(Error::BadProbability { what: format!("qpos[{len}]"), value: *p });
            }
        }
        check_normalized(&format!("qpos[{len}]"), self.entries.iter().map(|e| e.1))
    }
}

pub type PosRule = Arc<dyn Fn(usize) -> Option<PosLaw> + Send + Sync>;

/// Q^pos_ℓ as explicit tables, the shifted-base rule, or a named closure.
#[derive(Clone)]
pub enum QPos {
    Table(BTreeMap<usize, PosLaw>),
    Shifted { window: usize, base: PosLaw },
    Generated { name: String, rule: PosRule },
}

impl QPos {
    pub fn generated(name: impl Into<String>, rule: impl Fn(usize) -> Option<PosLaw> + Send + Sync + 'static) -> Self {
        QPos::Generated { name: name.into(), rule: Arc::new(rule) }
    }

    /// Validated law at `len`.
    pub fn law(&self, len: usize, k: usize) -> Result<PosLaw> {
        let law = match self {
            QPos::Table(t) => t.get(&len).cloned().ok_or(Error::UndefinedLength { len })?,
            QPos::Shifted { window, base } => {
                if len < *window {
                    return Err(Error::UndefinedLength { len });
                }
                let shifts = len - window + 1;
                let w = 1.0 / shifts as f64;
                let mut out = Vec::with_capacity(shifts * base.len());
                for delta in 0..shifts {
                    for (s, p) in &base.entries {
                        out.push((s.shift(delta as i64)?, p * w));
                    }
                }
                PosLaw::new(out)
            }
            QPos::Generated { rule, .. } => rule(len).ok_or(Error::UndefinedLength { len })?,
        };
        law.validate(len, k)?;
        Ok(law)
    }

    /// Explicit tables for every length in `lengths` at which the law is defined.
    pub fn materialize(&self, k: usize, lengths: impl IntoIterator<Item = usize>) -> Result<QPos> {
        let mut t = BTreeMap::new();
        for len in lengths {
            match self.law(len, k) {
                Ok(l) => {
                    t.insert(len, l);
                }
                Err(Error::UndefinedLength { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(QPos::Table(t))
    }
}

impl fmt::Debug for QPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QPos::Table(t) => f.debug_tuple("Table").field(&t.keys().collect::<Vec<_>>()).finish(),
            QPos::Shifted { window, base } => {
                f.debug_struct("Shifted").field("window", window).field("base", base).finish()
            }
            QPos::Generated { name, .. } => f.debug_tuple("Generated").field(name).finish(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Draw<T> {
    pub x: Vec<T>,
    pub sstar: Subset,
    pub y: LabelVec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedAtom<T> {
    pub x: Vec<T>,
    pub sstar: Subset,
    pub y: LabelVec,
    pub prob: f64,
}

/// Borrowed view of one support atom during streaming enumeration.
#[derive(Clone, Copy, Debug)]
pub struct AtomRef<'a, T> {
    pub x: &'a [T],
    pub sstar: &'a Subset,
    pub y: &'a LabelVec,
    pub prob: f64,
}

impl<T: Clone> AtomRef<'_, T> {
    pub fn to_owned(&self) -> WeightedAtom<T> {
        WeightedAtom { x: self.x.to_vec(), sstar: self.sstar.clone(), y: self.y.clone(), prob: self.prob }
    }
}

/// A distribution over labelled sequences at every length, enumerable exactly.
///
/// The support at a length is partitioned into cores; each core is visited
/// sequentially and cores may be visited in parallel.
pub trait Ensemble: Send + Sync {
    type Sym: Symbol;
    type Core: Send + Sync;

    /// Sparsity of hypotheses run against this ensemble.
    fn sparsity(&self) -> usize;
    fn label_space(&self) -> LabelSpace;
    /// Law of the planted set at `len`.
    fn position_law(&self, len: usize) -> Result<PosLaw>;
    /// Finite symbol set for exhaustive checks on sequences up to `max_len`.
    fn alphabet(&self, max_len: usize) -> Vec<Self::Sym>;
    fn sample(&self, len: usize, rng: &mut LabRng) -> Result<Draw<Self::Sym>>;
    fn cores(&self, len: usize) -> Result<Vec<Self::Core>>;
    fn core_size(&self, len: usize, core: &Self::Core) -> u128;
    fn visit_core(
        &self,
        len: usize,
        core: &Self::Core,
        f: &mut dyn FnMut(AtomRef<'_, Self::Sym>) -> Result<()>,
    ) -> Result<()>;
}

pub fn support_size<E: Ensemble + ?Sized>(ens: &E, len: usize) -> Result<u128> {
    let cores = ens.cores(len)?;
    Ok(cores.iter().fold(0u128, |a, c| a.saturating_add(ens.core_size(len, c))))
}

fn budgeted_cores<E: Ensemble + ?Sized>(ens: &E, len: usize, budget: u128) -> Result<Vec<E::Core>> {
    if len < ens.sparsity() {
        return Err(Error::TooShort { len, k: ens.sparsity() });
    }
    let cores = ens.cores(len)?;
    let needed = cores.iter().fold(0u128, |a, c| a.saturating_add(ens.core_size(len, c)));
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    Ok(cores)
}

/// Every atom of the support at `len`.
pub fn enumerate_support<E: Ensemble + ?Sized>(ens: &E, len: usize, budget: u128) -> Result<Vec<WeightedAtom<E::Sym>>> {
    let cores = budgeted_cores(ens, len, budget)?;
    let mut out = Vec::new();
    for c in &cores {
        ens.visit_core(len, c, &mut |a| {
            out.push(a.to_owned());
            Ok(())
        })?;
    }
    Ok(out)
}

/// Folds `step` over the support, one accumulator per core, cores in
/// parallel. Accumulators come back in core order so reductions over them
/// are bit-stable.
pub fn fold_support<E, A, I, F>(ens: &E, len: usize, budget: u128, init: I, step: F) -> Result<Vec<A>>
where
    E: Ensemble + ?Sized,
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, AtomRef<'_, E::Sym>) -> Result<()> + Sync,
{
    let cores = budgeted_cores(ens, len, budget)?;
    cores
        .par_iter()
        .map(|c| {
            let mut acc = init();
            ens.visit_core(len, c, &mut |a| step(&mut acc, a))?;
            Ok(acc)
        })
        .collect()
}

/// Non-planted parts of a planted ensemble.
#[derive(Clone, Debug)]
pub struct Components {
    pub k: usize,
    pub space: LabelSpace,
    /// Token ids; `mu` is aligned with this list.
    pub vocab: Vec<Token>,
    pub mu: Vec<f64>,
    /// Q^voc as (Z, probability) pairs over V^k.
    pub qvoc: Vec<(Vec<Token>, f64)>,
    pub gstar: ValueFn<Token>,
}

/// (μ, Q^pos_ℓ, Q^voc, g*).
#[derive(Clone, Debug)]
pub struct PlantedEnsemble {
    parts: Components,
    qpos: QPos,
    mu_support: Vec<(Token, f64)>,
}

#[derive(Clone, Debug)]
pub struct PlantedCore {
    sstar: Subset,
    z: usize,
    prob: f64,
    y: LabelVec,
}

impl PlantedEnsemble {
    pub fn new(parts: Components, qpos: QPos) -> Result<Self> {
        let Components { k, space, vocab, mu, qvoc, gstar } = &parts;
        if *k == 0 {
            return Err(Error::param("sparsity must be positive"));
        }
        if vocab.len() != mu.len() {
            return Err(Error::DimensionMismatch { left: vocab.len(), right: mu.len() });
        }
        let mut sorted = vocab.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("duplicate vocabulary token"));
        }
        check_normalized("mu", mu.iter().copied())?;
        check_normalized("qvoc", qvoc.iter().map(|e| e.1))?;
        let mut seen = std::collections::BTreeSet::new();
        for (z, p) in qvoc {
            if z.len() != *k {
                return Err(Error::param(format!("qvoc entry {z:?} does not have length {k}")));
            }
            if let Some(t) = z.iter().find(|t| !vocab.contains(t)) {
                return Err(Error::UnknownToken(t.to_string()));
            }
            if !seen.insert(z.clone()) {
                return Err(Error::param(format!("qvoc entry {z:?} repeated")));
            }
            if *p > 0.0 {
                space.check(&gstar.value(z)?)?;
            }
        }
        if let QPos::Shifted { window, base } = &qpos {
            if window < k {
                return Err(Error::param("shift window smaller than sparsity"));
            }
            base.validate(*window, *k)?;
        }
        let mu_support = vocab.iter().copied().zip(mu.iter().copied()).filter(|(_, p)| *p > 0.0).collect();
        Ok(PlantedEnsemble { parts, qpos, mu_support })
    }

    pub fn k(&self) -> usize {
        self.parts.k
    }

    pub fn components(&self) -> &Components {
        &self.parts
    }

    pub fn qpos(&self) -> &QPos {
        &self.qpos
    }

    pub fn vocab(&self) -> &[Token] {
        &self.parts.vocab
    }

    pub fn mu_support(&self) -> &[(Token, f64)] {
        &self.mu_support
    }

    pub fn gstar(&self, z: &[Token]) -> Result<LabelVec> {
        self.parts.gstar.value(z)
    }

    /// Same ensemble with a different position law.
    pub fn with_qpos(&self, qpos: QPos) -> Result<Self> {
        Self::new(self.parts.clone(), qpos)
    }

    /// Places `z` on `sstar` and fills the other positions from `background`
    /// in increasing position order.
    pub fn assemble(len: usize, sstar: &Subset, z: &[Token], background: &[Token]) -> Result<Vec<Token>> {
        if sstar.len() != z.len() || !sstar.within(len) || background.len() + z.len() != len {
            return Err(Error::param("planted set, tokens and background do not fit the length"));
        }
        let mut out = Vec::with_capacity(len);
        let (mut zi, mut bi) = (0, 0);
        for i in 1..=len {
            if sstar.contains(i) {
                out.push(z[zi]);
                zi += 1;
            } else {
                out.push(background[bi]);
                bi += 1;
            }
        }
        Ok(out)
    }

    pub(crate) fn sample_mu(&self, rng: &mut LabRng) -> Token {
        sample_table(&self.mu_support, rng)
    }

    pub(crate) fn sample_planted(&self, len: usize, rng: &mut LabRng) -> Result<(Subset, usize)> {
        let law = self.position_law(len)?;
        let s = sample_table(law.entries(), rng);
        let zi = WeightedIndex::new(self.parts.qvoc.iter().map(|e| e.1))
            .map_err(|e| Error::param(e.to_string()))?
            .sample(rng);
        Ok((s, zi))
    }
}

pub(crate) fn sample_table<T: Clone>(table: &[(T, f64)], rng: &mut LabRng) -> T {
    let u: f64 = rng.gen();
    let total: f64 = table.iter().map(|e| e.1).sum();
    let mut acc = 0.0;
    for (t, p) in table {
        acc += p / total;
        if u < acc {
            return t.clone();
        }
    }
    table[table.len() - 1].0.clone()
}

/// Visits every assignment of `support` tokens to `slots` positions with the
/// product probability.
pub(crate) fn for_each_background(
    support: &[(Token, f64)],
    slots: usize,
    mut f: impl FnMut(&[Token], f64) -> Result<()>,
) -> Result<()> {
    if support.is_empty() {
        return if slots == 0 { f(&[], 1.0) } else { Ok(()) };
    }
    let mut idx = vec![0usize; slots];
    let mut toks: Vec<Token> = vec![support[0].0; slots];
    loop {
        let p = idx.iter().map(|&i| support[i].1).product();
        f(&toks, p)?;
        let mut i = slots;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < support.len() {
                toks[i] = support[idx[i]].0;
                break;
            }
            idx[i] = 0;
            toks[i] = support[0].0;
        }
    }
}

pub(crate) fn background_count(support: usize, slots: usize) -> u128 {
    (0..slots).fold(1u128, |a, _| a.saturating_mul(support as u128))
}

impl Ensemble for PlantedEnsemble {
    type Sym = Token;
    type Core = PlantedCore;

    fn sparsity(&self) -> usize {
        self.parts.k
    }

    fn label_space(&self) -> LabelSpace {
        self.parts.space
    }

    fn position_law(&self, len: usize) -> Result<PosLaw> {
        if len < self.parts.k {
            return Err(Error::TooShort { len, k: self.parts.k });
        }
        self.qpos.law(len, self.parts.k)
    }

    fn alphabet(&self, _max_len: usize) -> Vec<Token> {
        self.parts.vocab.clone()
    }

    fn sample(&self, len: usize, rng: &mut LabRng) -> Result<Draw<Token>> {
        let (sstar, zi) = self.sample_planted(len, rng)?;
        let z = &self.parts.qvoc[zi].0;
        let background: Vec<Token> = (0..len - self.parts.k).map(|_| self.sample_mu(rng)).collect();
        let x = Self::assemble(len, &sstar, z, &background)?;
        Ok(Draw { x, sstar, y: self.parts.gstar.value(z)? })
    }

    fn cores(&self, len: usize) -> Result<Vec<PlantedCore>> {
        let law = self.position_law(len)?;
        let mut out = Vec::new();
        for (s, p) in law.entries() {
            for (zi, (z, q)) in self.parts.qvoc.iter().enumerate() {
                if *q > 0.0 {
                    out.push(PlantedCore { sstar: s.clone(), z: zi, prob: p * q, y: self.parts.gstar.value(z)? });
                }
            }
        }
        Ok(out)
    }

    fn core_size(&self, len: usize, _core: &PlantedCore) -> u128 {
        background_count(self.mu_support.len(), len - self.parts.k)
    }

    fn visit_core(
        &self,
        len: usize,
        core: &PlantedCore,
        f: &mut dyn FnMut(AtomRef<'_, Token>) -> Result<()>,
    ) -> Result<()> {
        let z = &self.parts.qvoc[core.z].0;
        let free: Vec<usize> = (1..=len).filter(|i| !core.sstar.contains(*i)).collect();
        let mut x = vec![0 as Token; len];
        for (&i, &t) in core.sstar.indices().iter().zip(z) {
            x[i - 1] = t;
        }
        for_each_background(&self.mu_support, free.len(), |bg, p| {
            for (&i, &t) in free.iter().zip(bg) {
                x[i - 1] = t;
            }
            f(AtomRef { x: &x, sstar: &core.sstar, y: &core.y, prob: core.prob * p })
        })
    }
}

/// Shifted-base construction: Q^pos_ℓ is the law of `S + Δ` with `S ~ base`
/// and `Δ ~ Unif{0..ℓ−window}`.
pub fn make_shifted_ensemble(base: PosLaw, window: usize, parts: Components) -> Result<PlantedEnsemble> {
    PlantedEnsemble::new(parts, QPos::Shifted { window, base })
}

/// Which of the two ratio families produced the coverage value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioKind {
    /// Q_ℓ(S) / Q_ℓ′(S − Δ)
    LongOverShifted,
    /// Q_ℓ′(S) / Q_ℓ(S)
    ShortOverLong,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioWitness {
    pub kind: RatioKind,
    pub shorter: usize,
    pub shift: usize,
    pub subset: Subset,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coverage {
    pub len: usize,
    pub window: usize,
    pub eta: f64,
    pub witness: Option<RatioWitness>,
}

impl Coverage {
    pub fn is_finite(&self) -> bool {
        self.eta.is_finite()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Smallest η bounding both position-law ratio families at `len`, over all
/// shorter lengths in `[window, len]` and all shifts.
pub fn coverage_eta<E: Ensemble + ?Sized>(ens: &E, len: usize, window: usize) -> Result<Coverage> {
    if len < window {
        return Err(Error::param(format!("length {len} below locality window {window}")));
    }
    let long = ens.position_law(len)?;
    let long_map: HashMap<&[usize], f64> = long.entries().iter().map(|(s, p)| (s.indices(), *p)).collect();
    let mut best = Coverage { len, window, eta: 0.0, witness: None };
    let mut consider = |r: f64, w: RatioWitness| {
        if r > best.eta {
            best.eta = r;
            best.witness = Some(w);
        }
    };
    for short_len in window.max(ens.sparsity())..=len {
        let short = ens.position_law(short_len)?;
        let short_map: HashMap<&[usize], f64> = short.entries().iter().map(|(s, p)| (s.indices(), *p)).collect();
        for (s, p) in long.entries() {
            let lo = s.last().saturating_sub(short_len);
            for delta in lo..s.first() {
                let shifted = s.shift(-(delta as i64))?;
                let q = short_map.get(shifted.indices()).copied().unwrap_or(0.0);
                consider(
                    ratio(*p, q),
                    RatioWitness {
                        kind: RatioKind::LongOverShifted,
                        shorter: short_len,
                        shift: delta,
                        subset: s.clone(),
                        ratio: ratio(*p, q),
                    },
                );
            }
        }
        for (s, p) in short.entries() {
            let q = long_map.get(s.indices()).copied().unwrap_or(0.0);
            consider(
                ratio(*p, q),
                RatioWitness {
                    kind: RatioKind::ShortOverLong,
                    shorter: short_len,
                    shift: 0,
                    subset: s.clone(),
                    ratio: ratio(*p, q),
                },
            );
        }
    }
    Ok(best)
}

/// φ(v): the v-th scaled basis vector of the hypercube label set.
pub fn one_hot_label(space: &LabelSpace, v: usize) -> LabelVec {
    let mut y = LabelVec::zeros(space.dim);
    y.0[v] = space.side();
    y
}

/// k-gram retrieval: a query k-gram at the end of the sequence repeats an
/// earlier k-gram, and the label is the token that followed it.
pub fn kgram_retrieval_ensemble(n: usize, k: usize) -> Result<PlantedEnsemble> {
    if n < 2 || k == 0 {
        return Err(Error::param("k-gram retrieval needs N >= 2 and k >= 1"));
    }
    let space = LabelSpace::new(n, crate::domain::Norm::L2)?;
    let vocab: Vec<Token> = (1..=n as Token).collect();
    let mu = vec![1.0 / n as f64; n];
    let mut qvoc = Vec::new();
    let total = (n as f64).powi(k as i32 + 1);
    crate::hypotheses::for_each_word(&vocab, k + 1, |w| {
        let mut z = w.to_vec();
        z.extend_from_slice(&w[..k]);
        qvoc.push((z, 1.0 / total));
    });
    let gstar = ValueFn::rule("phi_of_next", move |z: &[Token]| one_hot_label(&space, z[k] as usize - 1));
    let width = 2 * k + 1;
    let qpos = QPos::generated(format!("kgram_retrieval(k={k})"), move |len| {
        if len < width + 1 {
            return None;
        }
        let sets = (1..=len - width).map(|start| {
            let mut idx: Vec<usize> = (start + 1..=start + k + 1).collect();
            idx.extend(len - k + 1..=len);
            Subset::new(idx).expect("planted k-gram positions are increasing")
        });
        Some(PosLaw::uniform(sets))
    });
    PlantedEnsemble::new(Components { k: width, space, vocab, mu, qvoc, gstar }, qpos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::subsets_k;
    use crate::rng::seeded;

    fn s(v: &[usize]) -> Subset {
        Subset::new(v.to_vec()).unwrap()
    }

    pub(crate) fn adjacent(len: usize) -> PosLaw {
        PosLaw::uniform((1..len).map(|i| s(&[i, i + 1])))
    }

    fn point_mass() -> PlantedEnsemble {
        PlantedEnsemble::new(
            Components {
                k: 2,
                space: LabelSpace::unit_interval(),
                vocab: vec![1, 2],
                mu: vec![1.0, 0.0],
                qvoc: vec![(vec![2, 2], 1.0)],
                gstar: ValueFn::rule("g1", |x: &[Token]| LabelVec::scalar(if x == [2, 2] { 1.0 } else { 0.0 })),
            },
            QPos::generated("adjacent", |len| (len >= 2).then(|| adjacent(len))),
        )
        .unwrap()
    }

    #[test]
    fn point_mass_sample() {
        let ens = point_mass();
        let mut rng = seeded(1);
        for _ in 0..20 {
            let d = ens.sample(3, &mut rng).unwrap();
            let expect = if d.sstar == s(&[1, 2]) { vec![2, 2, 1] } else { vec![1, 2, 2] };
            assert_eq!(d.x, expect);
            assert_eq!(d.y, LabelVec::scalar(1.0));
        }
    }

    #[test]
    fn no_background_when_len_is_k() {
        let table = BTreeMap::from([(2, PosLaw::point(s(&[1, 2])))]);
        let ens = point_mass().with_qpos(QPos::Table(table)).unwrap();
        let d = ens.sample(2, &mut seeded(0)).unwrap();
        assert_eq!(d.x, vec![2, 2]);
        assert!(matches!(ens.sample(1, &mut seeded(0)), Err(Error::TooShort { .. })));
        assert!(matches!(ens.sample(3, &mut seeded(0)), Err(Error::UndefinedLength { .. })));
    }

    #[test]
    fn point_mass_support() {
        let atoms = enumerate_support(&point_mass(), 3, 1000).unwrap();
        assert_eq!(atoms.len(), 2);
        for a in &atoms {
            assert!((a.prob - 0.5).abs() < TOL);
        }
        assert_eq!(atoms[0].x, vec![2, 2, 1]);
        assert_eq!(atoms[1].x, vec![1, 2, 2]);
    }

    #[test]
    fn budget_is_enforced() {
        let ens = kgram_retrieval_ensemble(3, 1).unwrap();
        assert!(matches!(enumerate_support(&ens, 8, 10), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn support_sums_and_marginals() {
        let ens = kgram_retrieval_ensemble(2, 1).unwrap();
        for len in 4..7 {
            let atoms = enumerate_support(&ens, len, 1 << 20).unwrap();
            let total: f64 = atoms.iter().map(|a| a.prob).sum();
            assert!((total - 1.0).abs() < TOL);
            let law = ens.position_law(len).unwrap();
            let mut marg: BTreeMap<Subset, f64> = BTreeMap::new();
            for a in &atoms {
                *marg.entry(a.sstar.clone()).or_default() += a.prob;
                let z: Vec<Token> = a.sstar.indices().iter().map(|&i| a.x[i - 1]).collect();
                assert_eq!(a.y, ens.gstar(&z).unwrap());
            }
            for (sub, p) in law.entries() {
                assert!((marg[sub] - p).abs() < TOL);
            }
        }
    }

    #[test]
    fn shifted_base_law() {
        let base = PosLaw::point(s(&[1, 2]));
        let q = QPos::Shifted { window: 2, base: base.clone() };
        let law = q.law(4, 2).unwrap();
        assert_eq!(law.len(), 3);
        for sub in [s(&[1, 2]), s(&[2, 3]), s(&[3, 4])] {
            assert!((law.prob(&sub) - 1.0 / 3.0).abs() < TOL);
        }
        assert_eq!(q.law(2, 2).unwrap(), base);
        assert!(q.law(1, 2).is_err());
    }

    #[test]
    fn coverage_of_adjacent_uniform() {
        let c = coverage_eta(&point_mass(), 5, 2).unwrap();
        assert!((c.eta - 4.0).abs() < TOL);
        let c = coverage_eta(&point_mass(), 2, 2).unwrap();
        assert!((c.eta - 1.0).abs() < TOL);
        assert!(coverage_eta(&point_mass(), 1, 2).is_err());
    }

    /// Brute-force transcription of the two ratio families over every subset
    /// and shift, used as the oracle for the streamlined implementation.
    fn coverage_oracle(ens: &PlantedEnsemble, len: usize, window: usize) -> f64 {
        let k = ens.k();
        let q = |l: usize, sub: &Subset| ens.position_law(l).unwrap().prob(sub);
        let mut eta: f64 = 0.0;
        for lp in window..=len {
            for sub in subsets_k(len, k) {
                for delta in 0..len {
                    if let Ok(shifted) = sub.shift(-(delta as i64)) {
                        if shifted.within(lp) {
                            eta = eta.max(ratio(q(len, &sub), q(lp, &shifted)));
                        }
                    }
                }
                if sub.within(lp) {
                    eta = eta.max(ratio(q(lp, &sub), q(len, &sub)));
                }
            }
        }
        eta
    }

    #[test]
    fn shifted_coverage_is_at_most_len() {
        let bases = [
            PosLaw::point(s(&[1, 2])),
            PosLaw::new([(s(&[1, 2]), 0.25), (s(&[1, 3]), 0.5), (s(&[2, 3]), 0.25)]),
            PosLaw::new([(s(&[1, 4]), 0.7), (s(&[1, 2]), 0.05), (s(&[2, 3]), 0.1), (s(&[3, 4]), 0.15)]),
        ];
        for base in bases {
            let window = base.entries().iter().map(|e| e.0.last()).max().unwrap();
            let ens = point_mass().with_qpos(QPos::Shifted { window, base }).unwrap();
            for len in window..=20 {
                let c = coverage_eta(&ens, len, window).unwrap();
                assert!(c.eta <= len as f64 + TOL, "len {len}: {} {:?}", c.eta, c.witness);
                if len <= 9 {
                    assert!((c.eta - coverage_oracle(&ens, len, window)).abs() < TOL);
                }
            }
        }
    }

    #[test]
    fn shifted_base_not_closed_under_left_shift_has_infinite_coverage() {
        // {2,3} moved left by one lands on {1,2}, which the base never plants.
        let base = PosLaw::new([(s(&[1, 4]), 0.9), (s(&[2, 3]), 0.1)]);
        let ens = point_mass().with_qpos(QPos::Shifted { window: 4, base }).unwrap();
        let c = coverage_eta(&ens, 4, 4).unwrap();
        assert!(c.eta.is_infinite());
        assert!(coverage_oracle(&ens, 4, 4).is_infinite());
    }

    #[test]
    fn coverage_infinite_on_unsupported_shift() {
        let ens = point_mass()
            .with_qpos(QPos::generated("gap", |len| {
                if len <= 4 {
                    Some(adjacent(len))
                } else {
                    Some(PosLaw::uniform((1..=len - 2).map(|i| s(&[i, i + 2]))))
                }
            }))
            .unwrap();
        let c = coverage_eta(&ens, 6, 2).unwrap();
        assert!(c.eta.is_infinite());
        assert!((coverage_oracle(&ens, 6, 2)).is_infinite());
        assert!(c.witness.is_some());
    }

    #[test]
    fn empirical_position_frequencies() {
        let ens = point_mass()
            .with_qpos(QPos::Table(BTreeMap::from([(
                5,
                PosLaw::new([(s(&[1, 2]), 0.1), (s(&[2, 3]), 0.2), (s(&[3, 4]), 0.3), (s(&[4, 5]), 0.4)]),
            )])))
            .unwrap();
        let n = 100_000;
        let mut rng = seeded(11);
        let mut counts: BTreeMap<Subset, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(ens.sample(5, &mut rng).unwrap().sstar).or_default() += 1;
        }
        let law = ens.position_law(5).unwrap();
        for (sub, p) in law.entries() {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let got = counts.get(sub).copied().unwrap_or(0) as f64;
            assert!((got - n as f64 * p).abs() <= 3.0 * sigma + 1.0, "{sub}: {got}");
        }
    }

    #[test]
    fn kgram_worked_example() {
        let ens = kgram_retrieval_ensemble(3, 1).unwrap();
        let law = ens.position_law(5).unwrap();
        let sstar = s(&[2, 3, 5]);
        assert!(law.prob(&sstar) > 0.0);
        let z = vec![3, 1, 3];
        let x = PlantedEnsemble::assemble(5, &sstar, &z, &[2, 2]).unwrap();
        assert_eq!(x, vec![2, 3, 1, 2, 3]);
        let phi1 = one_hot_label(&ens.label_space(), 0);
        assert_eq!(ens.gstar(&z).unwrap(), phi1);
        let atoms = enumerate_support(&ens, 5, 1 << 20).unwrap();
        let hit = atoms.iter().find(|a| a.x == x && a.sstar == sstar).unwrap();
        assert_eq!(hit.y, phi1);
        assert!(matches!(ens.position_law(3), Err(Error::UndefinedLength { .. })));
    }

    #[test]
    fn kgram_label_space_has_unit_diameter() {
        let ens = kgram_retrieval_ensemble(4, 2).unwrap();
        let sp = ens.label_space();
        for a in 0..4 {
            for b in 0..4 {
                assert!(sp.loss(&one_hot_label(&sp, a), &one_hot_label(&sp, b)).unwrap() <= 1.0 + TOL);
            }
        }
    }

    #[test]
    fn kgram_samples() {
        let (n, k, len) = (4, 2, 9);
        let ens = kgram_retrieval_ensemble(n, k).unwrap();
        let mut rng = seeded(5);
        let mut starts = vec![0usize; len - 2 * k - 1];
        let draws = 10_000;
        for _ in 0..draws {
            let d = ens.sample(len, &mut rng).unwrap();
            let start = d.sstar.first() - 1;
            assert_eq!(d.x[start..start + k], d.x[len - k..]);
            assert_eq!(d.y, one_hot_label(&ens.label_space(), d.x[start + k] as usize - 1));
            starts[start - 1] += 1;
        }
        let p = 1.0 / starts.len() as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in starts {
            assert!((c as f64 - draws as f64 * p).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn rejects_bad_components() {
        let mut parts = point_mass().components().clone();
        parts.mu = vec![0.5, 0.4];
        assert!(matches!(
            PlantedEnsemble::new(parts.clone(), QPos::Table(BTreeMap::new())),
            Err(Error::NotNormalized { .. })
        ));
        parts.mu = vec![1.0, 0.0];
        parts.qvoc = vec![(vec![2, 7], 1.0)];
        assert!(PlantedEnsemble::new(parts, QPos::Table(BTreeMap::new())).is_err());
    }
}
