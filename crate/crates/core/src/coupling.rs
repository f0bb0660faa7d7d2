//! Position coupling: coupling maps and laws, the PC transform of sequences,
//! scores, values, families and ensembles, and the amenability validator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{diameter, for_each_subset, LabelSpace, LabelVec, Subset, Token, TOL};
use crate::ensembles::{
    fold_support, for_each_background, sample_table, AtomRef, Components, Draw, Ensemble, PlantedEnsemble, PosLaw, QPos,
};
use crate::error::{Error, Result};
use crate::hypotheses::{for_each_word, AttentionWeights, HypothesisFamily, ScoreFn, ValueFn};
use crate::rng::LabRng;

/// Element of the coupled vocabulary: (rank-or-index, token) pairs.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, Token)>", into = "Vec<(usize, Token)>")]
pub struct CoupledToken(Vec<(usize, Token)>);

impl CoupledToken {
    pub fn new(pairs: Vec<(usize, Token)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, _) in &pairs {
            if *i == 0 {
                return Err(Error::InvalidCoupling("coupled token index must be positive".into()));
            }
            if !seen.insert(*i) {
                return Err(Error::InvalidCoupling(format!("repeated index {i} inside one coupled token")));
            }
        }
        Ok(CoupledToken(pairs))
    }

    pub fn single(index: usize, token: Token) -> Self {
        CoupledToken(vec![(index, token)])
    }

    pub fn pairs(&self) -> &[(usize, Token)] {
        &self.0
    }
}

impl TryFrom<Vec<(usize, Token)>> for CoupledToken {
    type Error = Error;
    fn try_from(v: Vec<(usize, Token)>) -> Result<Self> {
        CoupledToken::new(v)
    }
}

impl From<CoupledToken> for Vec<(usize, Token)> {
    fn from(t: CoupledToken) -> Self {
        t.0
    }
}

impl fmt::Debug for CoupledToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (n, (i, t)) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, " ")?;
            }
            write!(f, "{i}:{t}")?;
        }
        write!(f, ")")
    }
}

/// ψ_ℓ : [ℓ] → [ℓ], stored 1-based.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CouplingMap(Vec<usize>);

impl CouplingMap {
    pub fn new(psi: Vec<usize>) -> Result<Self> {
        let len = psi.len();
        if len == 0 {
            return Err(Error::InvalidCoupling("coupling map on an empty index set".into()));
        }
        if let Some(v) = psi.iter().find(|&&v| v == 0 || v > len) {
            return Err(Error::InvalidCoupling(format!("image {v} outside [1, {len}]")));
        }
        Ok(CouplingMap(psi))
    }

    pub fn identity(len: usize) -> Self {
        CouplingMap((1..=len).collect())
    }

    /// Identity except that `a` and `b` trade places.
    pub fn transposition(len: usize, a: usize, b: usize) -> Result<Self> {
        let mut psi: Vec<usize> = (1..=len).collect();
        if a == 0 || b == 0 || a > len || b > len {
            return Err(Error::InvalidCoupling(format!("transposition ({a} {b}) outside [1, {len}]")));
        }
        psi.swap(a - 1, b - 1);
        Ok(CouplingMap(psi))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i - 1]
    }

    /// ψ^{-1}(i), ascending.
    pub fn preimage(&self, i: usize) -> Vec<usize> {
        (1..=self.len()).filter(|&j| self.apply(j) == i).collect()
    }

    /// ψ(S) as a sorted set.
    pub fn image(&self, s: &Subset) -> Vec<usize> {
        let set: BTreeSet<usize> = s.indices().iter().map(|&i| self.apply(i)).collect();
        set.into_iter().collect()
    }
}

impl TryFrom<Vec<usize>> for CouplingMap {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        CouplingMap::new(v)
    }
}

impl From<CouplingMap> for Vec<usize> {
    fn from(m: CouplingMap) -> Self {
        m.0
    }
}

impl fmt::Debug for CouplingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ψ{:?}", self.0)
    }
}

/// Joint law of (S*, ψ_ℓ) at one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledLaw {
    pub atoms: Vec<(Subset, CouplingMap, f64)>,
}

impl CoupledLaw {
    pub fn new(atoms: Vec<(Subset, CouplingMap, f64)>) -> Self {
        CoupledLaw { atoms }
    }

    pub fn validate(&self, len: usize, k: usize) -> Result<()> {
        for (s, psi, _) in &self.atoms {
            if s.len() != k || !s.within(len) {
                return Err(Error::InvalidSubset {
                    indices: s.indices().iter().map(|&i| i as i64).collect(),
                    reason: "not a k-subset of [len]",
                });
            }
            if psi.len() != len {
                return Err(Error::InvalidCoupling(format!("map on [{}] at length {len}", psi.len())));
            }
        }
        crate::domain::check_normalized("coupled law", self.atoms.iter().map(|a| a.2))
    }

    /// Law of S* alone.
    pub fn marginal(&self) -> PosLaw {
        PosLaw::new(self.atoms.iter().map(|(s, _, p)| (s.clone(), *p)))
    }

    /// Law of ψ(S*).
    pub fn image_law(&self) -> Result<PosLaw> {
        let mut out = Vec::with_capacity(self.atoms.len());
        for (s, psi, p) in &self.atoms {
            out.push((Subset::new(psi.image(s))?, *p));
        }
        Ok(PosLaw::new(out))
    }
}

pub type CouplingRule = Arc<dyn Fn(usize) -> Option<CoupledLaw> + Send + Sync>;

/// Q^pos-c_ℓ for every ℓ: explicit tables or a rule.
#[derive(Clone)]
pub enum Coupling {
    Table(BTreeMap<usize, CoupledLaw>),
    Generated { name: String, rule: CouplingRule },
}

impl Coupling {
    pub fn generated(
        name: impl Into<String>,
        rule: impl Fn(usize) -> Option<CoupledLaw> + Send + Sync + 'static,
    ) -> Self {
        Coupling::Generated { name: name.into(), rule: Arc::new(rule) }
    }

    pub fn law(&self, len: usize, k: usize) -> Result<CoupledLaw> {
        let law = match self {
            Coupling::Table(t) => t.get(&len).cloned().ok_or(Error::UndefinedLength { len })?,
            Coupling::Generated { rule, .. } => rule(len).ok_or(Error::UndefinedLength { len })?,
        };
        law.validate(len, k)?;
        Ok(law)
    }

    pub fn materialize(&self, k: usize, lengths: impl IntoIterator<Item = usize>) -> Result<Coupling> {
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
        Ok(Coupling::Table(t))
    }
}

impl fmt::Debug for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coupling::Table(t) => f.debug_tuple("Table").field(t).finish(),
            Coupling::Generated { name, .. } => f.debug_tuple("Generated").field(name).finish(),
        }
    }
}

/// 1-based position of `i` in the sorted set `omega`.
pub fn rank_in(omega: &[usize], i: usize) -> Result<usize> {
    if !omega.contains(&i) {
        return Err(Error::param(format!("{i} is not in {omega:?}")));
    }
    let below: BTreeSet<usize> = omega.iter().copied().filter(|&j| j < i).collect();
    Ok(below.len() + 1)
}

/// Shared body of the sampled and canonical transforms. `uncoupled(i, t)`
/// builds the token at a slot `i` outside ψ(S*), where `t` is the token at
/// the smallest preimage or `None` when `i` is not in the image.
fn couple(
    x: &[Token],
    sstar: &Subset,
    psi: &CouplingMap,
    mut uncoupled: impl FnMut(usize, Option<Token>) -> CoupledToken,
) -> Result<Vec<CoupledToken>> {
    let len = x.len();
    if psi.len() != len {
        return Err(Error::DimensionMismatch { left: psi.len(), right: len });
    }
    if !sstar.within(len) {
        return Err(Error::InvalidSubset {
            indices: sstar.indices().iter().map(|&i| i as i64).collect(),
            reason: "planted set outside the sequence",
        });
    }
    let image: BTreeSet<usize> = psi.image(sstar).into_iter().collect();
    let mut pre: Vec<Vec<usize>> = vec![Vec::new(); len];
    for j in 1..=len {
        pre[psi.apply(j) - 1].push(j);
    }
    // Ω = ψ^{-1}(ψ(S*)); ranks are positions within it.
    let omega: Vec<usize> = (1..=len).filter(|&j| image.contains(&psi.apply(j))).collect();
    let mut out = Vec::with_capacity(len);
    for i in 1..=len {
        let p = &pre[i - 1];
        let tok = if image.contains(&i) {
            CoupledToken(p.iter().map(|&j| (omega.partition_point(|&w| w < j) + 1, x[j - 1])).collect())
        } else {
            uncoupled(i, p.first().map(|&j| x[j - 1]))
        };
        out.push(tok);
    }
    Ok(out)
}

/// PC[X, S*] under ψ with the random index I and fresh background drawn from `rng`.
pub fn pc_sequence(
    x: &[Token],
    sstar: &Subset,
    psi: &CouplingMap,
    mu: &[(Token, f64)],
    rng: &mut LabRng,
) -> Result<Vec<CoupledToken>> {
    if mu.is_empty() {
        return Err(Error::param("background law has empty support"));
    }
    let len = x.len();
    couple(x, sstar, psi, |_, t| {
        let index = rng.gen_range(1..=len);
        CoupledToken::single(index, t.unwrap_or_else(|| sample_table(mu, rng)))
    })
}

/// PC[X, S*] with every uncoupled index set to its own slot and fresh
/// tokens taken from `fresh` in slot order.
pub fn pc_sequence_canonical(
    x: &[Token],
    sstar: &Subset,
    psi: &CouplingMap,
    fresh: &[Token],
) -> Result<Vec<CoupledToken>> {
    let mut it = fresh.iter();
    let mut short = false;
    let seq = couple(x, sstar, psi, |i, t| {
        let v = t.unwrap_or_else(|| match it.next() {
            Some(&v) => v,
            None => {
                short = true;
                0
            }
        });
        CoupledToken::single(i, v)
    })?;
    if short || it.next().is_some() {
        return Err(Error::param("fresh token count does not match the slots outside the image"));
    }
    Ok(seq)
}

/// Slots of [ℓ] outside the image of ψ.
pub fn unmapped_slots(psi: &CouplingMap) -> usize {
    let image: BTreeSet<usize> = psi.as_slice().iter().copied().collect();
    psi.len() - image.len()
}

/// All (index, token) pairs sorted by index, keeping the first token seen at
/// each index.
pub fn expand(tokens: &[CoupledToken]) -> Vec<Token> {
    let mut pairs: Vec<(usize, Token)> = tokens.iter().flat_map(|t| t.0.iter().copied()).collect();
    pairs.sort_by_key(|p| p.0);
    pairs.dedup_by_key(|p| p.0);
    pairs.into_iter().map(|p| p.1).collect()
}

/// PC[g0]: −∞ beyond the window or on malformed expansions, else g0 of the expansion.
pub fn pc_score(g0: &ScoreFn<Token>, window: usize, k: usize) -> Result<ScoreFn<CoupledToken>> {
    if !g0.is_position_independent() {
        return Err(Error::PositionDependent(g0.name().to_string()));
    }
    let inner = g0.clone();
    Ok(ScoreFn::rule(format!("PC[{}]", g0.name()), move |s: &[usize], x: &[CoupledToken]| {
        if diameter(s) > window {
            return f64::NEG_INFINITY;
        }
        let e = expand(x);
        if e.len() != k {
            return f64::NEG_INFINITY;
        }
        inner.content_score(&e).expect("checked position-independent")
    })
    .declare_local(window)
    .declare_relative())
}

/// PC[g1]: g1 of the expansion when it has length k, else `y0`.
pub fn pc_value(g1: &ValueFn<Token>, k: usize, y0: LabelVec, space: &LabelSpace) -> Result<ValueFn<CoupledToken>> {
    space.check(&y0)?;
    let inner = g1.clone();
    Ok(ValueFn::rule(format!("PC[{}]", g1.name()), move |x: &[CoupledToken]| {
        let e = expand(x);
        if e.len() == k {
            // A malformed g1 table is a construction error; fall back to y0.
            inner.value(&e).unwrap_or_else(|_| y0.clone())
        } else {
            y0.clone()
        }
    }))
}

/// Element-wise PC wrap of a position-independent family; `y0` defaults to
/// the centroid of Y.
pub fn pc_family(
    fam: &HypothesisFamily<Token>,
    window: usize,
    y0: Option<LabelVec>,
    space: &LabelSpace,
) -> Result<HypothesisFamily<CoupledToken>> {
    let k = fam.k();
    let y0 = y0.unwrap_or_else(|| space.centroid());
    let g0s = fam.score_fns().iter().map(|g| pc_score(g, window, k)).collect::<Result<Vec<_>>>()?;
    let g1s = fam.value_fns().iter().map(|g| pc_value(g, k, y0.clone(), space)).collect::<Result<Vec<_>>>()?;
    HypothesisFamily::new(k, g0s, g1s)
}

/// PC[P]: the planted ensemble pushed through a coupling law.
///
/// Exact enumeration fixes the random index of every uncoupled slot to the
/// slot itself; `check_index_invariance` certifies that a family cannot
/// tell the difference.
#[derive(Clone, Debug)]
pub struct CoupledEnsemble {
    base: PlantedEnsemble,
    coupling: Coupling,
}

#[derive(Clone, Debug)]
pub struct CoupledCore {
    sstar: Subset,
    psi: CouplingMap,
    image: Subset,
    z: usize,
    fresh: usize,
    prob: f64,
    y: LabelVec,
}

impl CoupledEnsemble {
    pub fn new(base: PlantedEnsemble, coupling: Coupling) -> Self {
        CoupledEnsemble { base, coupling }
    }

    pub fn base(&self) -> &PlantedEnsemble {
        &self.base
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// Coupled law at `len`, checked against the base position law.
    pub fn law(&self, len: usize) -> Result<CoupledLaw> {
        let k = self.base.k();
        let law = self.coupling.law(len, k)?;
        let want = self.base.position_law(len)?;
        let got = law.marginal();
        for (s, _) in want.entries().iter().chain(got.entries()) {
            let gap = (want.prob(s) - got.prob(s)).abs();
            if gap > TOL {
                return Err(Error::MarginalMismatch { len, gap });
            }
        }
        Ok(law)
    }
}

impl Ensemble for CoupledEnsemble {
    type Sym = CoupledToken;
    type Core = CoupledCore;

    fn sparsity(&self) -> usize {
        self.base.k()
    }

    fn label_space(&self) -> LabelSpace {
        self.base.components().space
    }

    fn position_law(&self, len: usize) -> Result<PosLaw> {
        let law = self.law(len)?.image_law()?;
        if let Some((s, _)) = law.entries().first() {
            law.validate(len, s.len())?;
        }
        Ok(law)
    }

    /// Every coupled token that can occur on sequences up to `max_len`:
    /// planted groups from the coupling laws and (index, background) pairs.
    fn alphabet(&self, max_len: usize) -> Vec<CoupledToken> {
        let k = self.base.k();
        let bg: Vec<Token> = self.base.mu_support().iter().map(|e| e.0).collect();
        let mut out = BTreeSet::new();
        for i in 1..=max_len {
            for &v in &bg {
                out.insert(CoupledToken::single(i, v));
            }
        }
        for len in k..=max_len {
            let Ok(law) = self.law(len) else { continue };
            for (s, psi, p) in &law.atoms {
                if *p <= 0.0 {
                    continue;
                }
                for (z, q) in &self.base.components().qvoc {
                    if *q <= 0.0 {
                        continue;
                    }
                    let mut x = vec![0 as Token; len];
                    for (&i, &t) in s.indices().iter().zip(z) {
                        x[i - 1] = t;
                    }
                    let slots: Vec<usize> = (1..=len).filter(|i| !s.contains(*i)).collect();
                    let image = psi.image(s);
                    // Only slots feeding a planted group matter here.
                    let feeding: Vec<usize> =
                        slots.iter().copied().filter(|&j| image.contains(&psi.apply(j))).collect();
                    let _ = for_each_background(self.base.mu_support(), feeding.len(), |b, _| {
                        for (&j, &t) in feeding.iter().zip(b) {
                            x[j - 1] = t;
                        }
                        for &j in &slots {
                            if !feeding.contains(&j) {
                                x[j - 1] = bg[0];
                            }
                        }
                        let fresh = vec![bg[0]; unmapped_slots(psi)];
                        if let Ok(seq) = pc_sequence_canonical(&x, s, psi, &fresh) {
                            for &i in &image {
                                out.insert(seq[i - 1].clone());
                            }
                        }
                        Ok(())
                    });
                }
            }
        }
        out.into_iter().collect()
    }

    fn sample(&self, len: usize, rng: &mut LabRng) -> Result<Draw<CoupledToken>> {
        let law = self.law(len)?;
        let pick = sample_table(&law.atoms.iter().enumerate().map(|(i, a)| (i, a.2)).collect::<Vec<_>>(), rng);
        let (sstar, psi, _) = &law.atoms[pick];
        let parts = self.base.components();
        let zi = sample_table(&parts.qvoc.iter().enumerate().map(|(i, e)| (i, e.1)).collect::<Vec<_>>(), rng);
        let z = &parts.qvoc[zi].0;
        let background: Vec<Token> = (0..len - parts.k).map(|_| sample_table(self.base.mu_support(), rng)).collect();
        let x = PlantedEnsemble::assemble(len, sstar, z, &background)?;
        let seq = pc_sequence(&x, sstar, psi, self.base.mu_support(), rng)?;
        Ok(Draw { x: seq, sstar: Subset::new(psi.image(sstar))?, y: parts.gstar.value(z)? })
    }

    fn cores(&self, len: usize) -> Result<Vec<CoupledCore>> {
        let law = self.law(len)?;
        let parts = self.base.components();
        let mut out = Vec::new();
        for (s, psi, p) in &law.atoms {
            if *p <= 0.0 {
                continue;
            }
            let image = Subset::new(psi.image(s))?;
            for (zi, (z, q)) in parts.qvoc.iter().enumerate() {
                if *q > 0.0 {
                    out.push(CoupledCore {
                        sstar: s.clone(),
                        psi: psi.clone(),
                        image: image.clone(),
                        z: zi,
                        fresh: unmapped_slots(psi),
                        prob: p * q,
                        y: parts.gstar.value(z)?,
                    });
                }
            }
        }
        Ok(out)
    }

    fn core_size(&self, len: usize, core: &CoupledCore) -> u128 {
        crate::ensembles::background_count(self.base.mu_support().len(), len - self.base.k() + core.fresh)
    }

    fn visit_core(
        &self,
        len: usize,
        core: &CoupledCore,
        f: &mut dyn FnMut(AtomRef<'_, CoupledToken>) -> Result<()>,
    ) -> Result<()> {
        let k = self.base.k();
        let z = &self.base.components().qvoc[core.z].0;
        let slots: Vec<usize> = (1..=len).filter(|i| !core.sstar.contains(*i)).collect();
        let mut x = vec![0 as Token; len];
        for (&i, &t) in core.sstar.indices().iter().zip(z) {
            x[i - 1] = t;
        }
        for_each_background(self.base.mu_support(), len - k + core.fresh, |bg, p| {
            let (orig, fresh) = bg.split_at(len - k);
            for (&i, &t) in slots.iter().zip(orig) {
                x[i - 1] = t;
            }
            let seq = pc_sequence_canonical(&x, &core.sstar, &core.psi, fresh)?;
            f(AtomRef { x: &seq, sstar: &core.image, y: &core.y, prob: core.prob * p })
        })
    }
}

pub fn pc_ensemble(base: PlantedEnsemble, coupling: Coupling) -> CoupledEnsemble {
    CoupledEnsemble::new(base, coupling)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmenabilityViolation {
    pub item: u8,
    pub len: usize,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmenabilityCheck {
    pub holds: bool,
    pub k_prime: Option<usize>,
    pub violation: Option<AmenabilityViolation>,
}

/// For i ∈ ψ(S*) in increasing order, the sorted ranks in Ω of ψ^{-1}(i).
pub fn rank_tuple(sstar: &Subset, psi: &CouplingMap) -> Vec<Vec<usize>> {
    let image = psi.image(sstar);
    let omega: Vec<usize> = (1..=psi.len()).filter(|&j| image.contains(&psi.apply(j))).collect();
    image
        .iter()
        .map(|&i| psi.preimage(i).into_iter().map(|j| omega.partition_point(|&w| w < j) + 1).collect())
        .collect()
}

/// Items 1–3 of a local position coupling, exactly, at every given length.
pub fn validate_coupling(coupling: &Coupling, k: usize, window: usize, lengths: &[usize]) -> Result<AmenabilityCheck> {
    let fail = |item: u8, len: usize, detail: String, k_prime| {
        Ok(AmenabilityCheck { holds: false, k_prime, violation: Some(AmenabilityViolation { item, len, detail }) })
    };
    let mut k_prime: Option<usize> = None;
    let mut reference: Option<(usize, BTreeMap<Vec<Vec<usize>>, f64>)> = None;
    for &len in lengths {
        let law = coupling.law(len, k)?;
        let mut tuples: BTreeMap<Vec<Vec<usize>>, f64> = BTreeMap::new();
        for (s, psi, p) in &law.atoms {
            if *p <= 0.0 {
                continue;
            }
            let image = psi.image(s);
            if diameter(&image) > window {
                return fail(1, len, format!("ψ({s}) = {image:?} under {psi:?} spans more than {window}"), k_prime);
            }
            for j in 1..=len {
                if !s.contains(j) && psi.preimage(psi.apply(j)).len() != 1 {
                    return fail(2, len, format!("index {j} outside {s} is coupled under {psi:?}"), k_prime);
                }
            }
            match k_prime {
                None => k_prime = Some(image.len()),
                Some(kp) if kp != image.len() => {
                    return fail(3, len, format!("|ψ({s})| = {} but k′ = {kp}", image.len()), k_prime);
                }
                _ => {}
            }
            *tuples.entry(rank_tuple(s, psi)).or_insert(0.0) += p;
        }
        match &reference {
            None => reference = Some((len, tuples)),
            Some((l0, t0)) => {
                let keys: BTreeSet<&Vec<Vec<usize>>> = t0.keys().chain(tuples.keys()).collect();
                for key in keys {
                    let a = t0.get(key).copied().unwrap_or(0.0);
                    let b = tuples.get(key).copied().unwrap_or(0.0);
                    if (a - b).abs() > TOL {
                        return fail(
                            3,
                            len,
                            format!("rank tuple {key:?} has mass {b} here but {a} at length {l0}"),
                            k_prime,
                        );
                    }
                }
            }
        }
    }
    Ok(AmenabilityCheck { holds: true, k_prime, violation: None })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexInvariance {
    pub holds: bool,
    pub witness: Option<String>,
}

/// Certifies that every member's output on the coupled ensemble is the
/// same for all values of the random indices at uncoupled slots, so exact
/// enumeration with canonical indices gives the true risk.
///
/// Scores must not move with the indices on any subset; values must not
/// move wherever their score is finite, and nowhere at all for score
/// functions that reach the uniform fallback on the support.
pub fn check_index_invariance(
    fam: &HypothesisFamily<CoupledToken>,
    ens: &CoupledEnsemble,
    lengths: &[usize],
    budget: u128,
) -> Result<IndexInvariance> {
    let k = fam.k();
    let bg: BTreeSet<Token> = ens.base.mu_support().iter().map(|e| e.0).collect();
    for &len in lengths {
        // Classes: planted groups stand for themselves, background pairs for
        // every index in [len].
        let mut classes: Vec<Option<Token>> = Vec::new();
        let mut fixed: Vec<CoupledToken> = Vec::new();
        for t in ens.alphabet(len) {
            match t.pairs() {
                [(_, v)] if bg.contains(v) => {}
                _ => fixed.push(t),
            }
        }
        for &v in &bg {
            classes.push(Some(v));
        }
        classes.extend(std::iter::repeat(None).take(fixed.len()));
        let class_ids: Vec<usize> = (0..classes.len()).collect();
        let n0 = fam.score_fns().len();
        let n1 = fam.value_fns().len();
        let mut score_ok = vec![true; n0];
        let mut value_ok_finite = vec![vec![true; n1]; n0];
        let mut value_ok_all = vec![true; n1];
        let mut witness: Option<String> = None;
        let nbg = bg.len();
        let mut words: Vec<Vec<usize>> = Vec::new();
        for_each_word(&class_ids, k, |w| words.push(w.to_vec()));
        for w in &words {
            let wild: Vec<usize> = (0..k).filter(|&p| w[p] < nbg).collect();
            let realize = |idx: &[usize]| -> Vec<CoupledToken> {
                let mut n = 0;
                w.iter()
                    .map(|&c| match classes[c] {
                        Some(v) => {
                            let t = CoupledToken::single(idx[n], v);
                            n += 1;
                            t
                        }
                        None => fixed[c - nbg].clone(),
                    })
                    .collect()
            };
            let mut assignments: Vec<Vec<usize>> = Vec::new();
            let positions: Vec<usize> = (1..=len).collect();
            for_each_word(&positions, wild.len(), |a| assignments.push(a.to_vec()));
            if assignments.is_empty() {
                assignments.push(Vec::new());
            }
            let first = realize(&assignments[0]);
            let base_vals: Vec<LabelVec> = fam.value_fns().iter().map(|g| g.value(&first)).collect::<Result<_>>()?;
            let mut finite_somewhere = vec![false; n0];
            let mut sub_scores: Vec<Vec<f64>> = vec![Vec::new(); n0];
            let _ = for_each_subset::<()>(len, k, |s| {
                for (i0, g) in fam.score_fns().iter().enumerate() {
                    let v = g.score(s, &first);
                    finite_somewhere[i0] |= v != f64::NEG_INFINITY;
                    sub_scores[i0].push(v);
                }
                Ok(())
            });
            for a in assignments.iter().skip(1) {
                let x = realize(a);
                let mut n = 0;
                let _ = for_each_subset::<()>(len, k, |s| {
                    for (i0, g) in fam.score_fns().iter().enumerate() {
                        let v = g.score(s, &x);
                        let u = sub_scores[i0][n];
                        if score_ok[i0] && !(u == v || (u - v).abs() <= TOL) {
                            score_ok[i0] = false;
                            witness.get_or_insert_with(|| {
                                format!("{} moves on {s:?} between {first:?} and {x:?}", g.name())
                            });
                        }
                    }
                    n += 1;
                    Ok(())
                });
                for (i1, g) in fam.value_fns().iter().enumerate() {
                    let y = g.value(&x)?;
                    let same = y.dim() == base_vals[i1].dim()
                        && y.0.iter().zip(&base_vals[i1].0).all(|(a, b)| (a - b).abs() <= TOL);
                    if !same {
                        value_ok_all[i1] = false;
                        for i0 in 0..n0 {
                            if finite_somewhere[i0] && value_ok_finite[i0][i1] {
                                value_ok_finite[i0][i1] = false;
                                witness.get_or_insert_with(|| {
                                    format!(
                                        "{} moves between {first:?} and {x:?} where {} is finite",
                                        g.name(),
                                        fam.score_fns()[i0].name()
                                    )
                                });
                            }
                        }
                    }
                }
            }
        }
        if let Some(i0) = score_ok.iter().position(|ok| !ok) {
            return Ok(IndexInvariance {
                holds: false,
                witness: witness.or(Some(fam.score_fns()[i0].name().to_string())),
            });
        }
        for i0 in 0..n0 {
            if let Some(i1) = value_ok_finite[i0].iter().position(|ok| !ok) {
                return Ok(IndexInvariance {
                    holds: false,
                    witness: witness.or(Some(format!(
                        "{} under {}",
                        fam.value_fns()[i1].name(),
                        fam.score_fns()[i0].name()
                    ))),
                });
            }
        }
        if value_ok_all.iter().all(|&ok| ok) {
            continue;
        }
        // Some value moves off the finite-score words; the fallback must then never fire.
        let hits = fold_support(
            ens,
            len,
            budget,
            || vec![false; n0],
            |acc, a| {
                for (i0, g) in fam.score_fns().iter().enumerate() {
                    if !acc[i0] && AttentionWeights::compute(g, a.x, k)?.is_uniform() {
                        acc[i0] = true;
                    }
                }
                Ok(())
            },
        )?;
        for i0 in 0..n0 {
            if hits.iter().any(|h| h[i0]) {
                if let Some(i1) = value_ok_all.iter().position(|ok| !ok) {
                    return Ok(IndexInvariance {
                        holds: false,
                        witness: Some(format!(
                            "{} falls back to the uniform mean at length {len} and {} reads the indices",
                            fam.score_fns()[i0].name(),
                            fam.value_fns()[i1].name()
                        )),
                    });
                }
            }
        }
    }
    Ok(IndexInvariance { holds: true, witness: None })
}

/// Couplings offered by the far-pair instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarPairCoupling {
    /// Swap a+1 and ℓ so the pair {a, ℓ} lands on {a, a+1}.
    Transposition,
    Identity,
    /// Send ℓ onto a+1 without moving a+1: a background index gets coupled.
    Collapse,
}

impl FarPairCoupling {
    pub const ALL: [FarPairCoupling; 3] =
        [FarPairCoupling::Transposition, FarPairCoupling::Identity, FarPairCoupling::Collapse];

    pub fn name(self) -> &'static str {
        match self {
            FarPairCoupling::Transposition => "transposition",
            FarPairCoupling::Identity => "identity",
            FarPairCoupling::Collapse => "collapse",
        }
    }

    pub fn map(self, len: usize, a: usize) -> Result<CouplingMap> {
        match self {
            FarPairCoupling::Transposition => CouplingMap::transposition(len, a + 1, len),
            FarPairCoupling::Identity => Ok(CouplingMap::identity(len)),
            FarPairCoupling::Collapse => {
                let mut psi: Vec<usize> = (1..=len).collect();
                psi[len - 1] = a + 1;
                CouplingMap::new(psi)
            }
        }
    }
}

impl std::str::FromStr for FarPairCoupling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FarPairCoupling::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::param(format!("unknown coupling {s:?}")))
    }
}

/// Far-pair instance: a marker 3 at a uniform position a < ℓ and a payload
/// (3 or 4) at the last position; the label is 1 iff the payload is 4.
/// Background tokens are 1 and 2, so only the planted pair looks like one.
#[derive(Clone, Debug)]
pub struct FarPair {
    pub ensemble: PlantedEnsemble,
    pub coupling: Coupling,
    /// Position-independent family; member 1 strongly realizes the ensemble.
    pub family: HypothesisFamily<Token>,
    /// The same family with its score restricted to the locality window.
    pub local_family: HypothesisFamily<Token>,
    pub window: usize,
}

pub const FAR_PAIR_WINDOW: usize = 2;

pub fn far_pair_components() -> Components {
    Components {
        k: 2,
        space: LabelSpace::unit_interval(),
        vocab: vec![1, 2, 3, 4],
        mu: vec![0.5, 0.5, 0.0, 0.0],
        qvoc: vec![(vec![3, 3], 0.5), (vec![3, 4], 0.5)],
        gstar: ValueFn::rule("payload", |z: &[Token]| LabelVec::scalar(if z[1] == 4 { 1.0 } else { 0.0 })),
    }
}

pub fn far_pair_qpos() -> QPos {
    QPos::generated("far_pair", |len| {
        if len < 2 {
            return None;
        }
        Some(PosLaw::uniform((1..len).map(|a| Subset::new(vec![a, len]).expect("a < len"))))
    })
}

pub fn far_pair(which: FarPairCoupling) -> Result<FarPair> {
    let ensemble = PlantedEnsemble::new(far_pair_components(), far_pair_qpos())?;
    let coupling = Coupling::generated(format!("far_pair_{}", which.name()), move |len| {
        if len < 2 {
            return None;
        }
        let p = 1.0 / (len - 1) as f64;
        let atoms = (1..len)
            .map(|a| Ok((Subset::new(vec![a, len])?, which.map(len, a)?, p)))
            .collect::<Result<Vec<_>>>()
            .ok()?;
        Some(CoupledLaw::new(atoms))
    });
    let is_pair = |x: &[Token]| x[0] == 3 && (x[1] == 3 || x[1] == 4);
    let pair = ScoreFn::content("pair", move |x: &[Token]| if is_pair(x) { 0.0 } else { f64::NEG_INFINITY });
    let window = FAR_PAIR_WINDOW;
    let local_pair =
        ScoreFn::rule(
            "local_pair",
            move |s: &[usize], x: &[Token]| {
                if diameter(s) <= window && is_pair(x) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            },
        )
        .declare_local(window)
        .declare_relative();
    let values = vec![
        ValueFn::constant("half", LabelVec::scalar(0.5)),
        ValueFn::rule("second_is_4", |x: &[Token]| LabelVec::scalar(if x[1] == 4 { 1.0 } else { 0.0 })),
    ];
    Ok(FarPair {
        ensemble,
        coupling,
        family: HypothesisFamily::new(2, vec![pair], values.clone())?,
        local_family: HypothesisFamily::new(2, vec![local_pair], values)?,
        window,
    })
}
