//! Population risk, the training objective and its minimizer, realizability
//! checks and the length-generalization verdict with the theorem's bound.

use serde::{Deserialize, Serialize};

use crate::domain::{LabelVec, TOL};
use crate::ensembles::{coverage_eta, fold_support, Ensemble};
use crate::error::{Error, Result};
use crate::hypotheses::{check_local, check_relative, AttentionWeights, FunctionalAttention, HypothesisFamily, Symbol};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RiskMode {
    /// Sum over the enumerated support; fails if it has more than `budget` atoms.
    Exact {
        budget: u128,
    },
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub value: f64,
    pub mode: RiskMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_err: Option<f64>,
}

/// Lengths ⌈L/2⌉..=L averaged by the training objective.
pub fn training_lengths(train_len: usize) -> std::ops::RangeInclusive<usize> {
    train_len.div_ceil(2)..=train_len
}

pub fn population_risk<E: Ensemble + ?Sized>(
    h: &FunctionalAttention<E::Sym>,
    ens: &E,
    len: usize,
    mode: RiskMode,
) -> Result<RiskReport> {
    if len < h.k {
        return Err(Error::TooShort { len, k: h.k });
    }
    let space = ens.label_space();
    match mode {
        RiskMode::Exact { budget } => {
            let parts = fold_support(
                ens,
                len,
                budget,
                || 0.0f64,
                |acc, a| {
                    *acc += a.prob * space.loss(&h.evaluate(a.x)?, a.y)?;
                    Ok(())
                },
            )?;
            Ok(RiskReport { value: parts.iter().sum(), mode, samples: None, std_err: None })
        }
        RiskMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::param("Monte Carlo risk needs at least one sample"));
            }
            let mut rng = seeded(seed);
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..samples {
                let d = ens.sample(len, &mut rng)?;
                let l = space.loss(&h.evaluate(&d.x)?, &d.y)?;
                sum += l;
                sq += l * l;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = if samples > 1 { ((sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
            Ok(RiskReport { value: mean, mode, samples: Some(samples), std_err: Some((var / n).sqrt()) })
        }
    }
}

/// Exact risk of every family member at `len`, in member order.
pub fn family_risks<E: Ensemble + ?Sized>(
    fam: &HypothesisFamily<E::Sym>,
    ens: &E,
    len: usize,
    budget: u128,
) -> Result<Vec<f64>> {
    let space = ens.label_space();
    let n = fam.len();
    let parts = fold_support(
        ens,
        len,
        budget,
        || vec![0.0f64; n],
        |acc, a| {
            for (r, y) in acc.iter_mut().zip(fam.evaluate_all(a.x)?) {
                *r += a.prob * space.loss(&y, a.y)?;
            }
            Ok(())
        },
    )?;
    let mut out = vec![0.0; n];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out)
}

pub fn training_objective<E: Ensemble + ?Sized>(
    h: &FunctionalAttention<E::Sym>,
    ens: &E,
    train_len: usize,
    budget: u128,
) -> Result<f64> {
    let lens = training_lengths(train_len);
    let count = lens.clone().count() as f64;
    let mut total = 0.0;
    for len in lens {
        total += population_risk(h, ens, len, RiskMode::Exact { budget })?.value;
    }
    Ok(total / count)
}

/// Training objective of every member, in member order.
pub fn family_objectives<E: Ensemble + ?Sized>(
    fam: &HypothesisFamily<E::Sym>,
    ens: &E,
    train_len: usize,
    budget: u128,
) -> Result<Vec<f64>> {
    let lens = training_lengths(train_len);
    let count = lens.clone().count() as f64;
    let mut total = vec![0.0; fam.len()];
    for len in lens {
        for (t, r) in total.iter_mut().zip(family_risks(fam, ens, len, budget)?) {
            *t += r;
        }
    }
    Ok(total.into_iter().map(|t| t / count).collect())
}

#[derive(Clone, Debug)]
pub struct Minimizer<T> {
    pub hypothesis: FunctionalAttention<T>,
    pub index: usize,
    pub objective: f64,
    pub objectives: Vec<f64>,
}

/// Member with the smallest training objective; ties go to the lowest index.
pub fn risk_minimize<E: Ensemble + ?Sized>(
    fam: &HypothesisFamily<E::Sym>,
    ens: &E,
    train_len: usize,
    budget: u128,
) -> Result<Minimizer<E::Sym>> {
    let objectives = family_objectives(fam, ens, train_len, budget)?;
    let mut index = 0;
    for (i, &o) in objectives.iter().enumerate() {
        if o < objectives[index] {
            index = i;
        }
    }
    Ok(Minimizer { hypothesis: fam.member(index), index, objective: objectives[index], objectives })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LGReport {
    pub l_train: usize,
    pub l_test: usize,
    pub epsilon: f64,
    pub chosen: usize,
    pub chosen_name: String,
    pub train_objective: f64,
    pub test_risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub holds: bool,
}

pub fn check_length_generalization<E: Ensemble + ?Sized>(
    fam: &HypothesisFamily<E::Sym>,
    ens: &E,
    train_len: usize,
    test_len: usize,
    epsilon: f64,
    budget: u128,
) -> Result<LGReport> {
    if test_len <= train_len {
        return Err(Error::param(format!("test length {test_len} must exceed training length {train_len}")));
    }
    let m = risk_minimize(fam, ens, train_len, budget)?;
    let test_risk = population_risk(&m.hypothesis, ens, test_len, RiskMode::Exact { budget })?.value;
    Ok(LGReport {
        l_train: train_len,
        l_test: test_len,
        epsilon,
        chosen: m.index,
        chosen_name: fam.member_name(m.index),
        train_objective: m.objective,
        test_risk,
        bound: None,
        holds: test_risk <= epsilon,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realizability {
    pub holds: bool,
    pub witness: Option<usize>,
    /// Per member, the worst risk (plain) or failure mass (strong) over the lengths.
    pub worst: Vec<f64>,
}

fn first_within(worst: &[f64], delta: f64) -> Option<usize> {
    worst.iter().position(|&w| w <= delta + TOL)
}

/// Some member has exact risk at most `delta` at every length in `lengths`.
pub fn check_realizability<E: Ensemble + ?Sized>(
    fam: &HypothesisFamily<E::Sym>,
    ens: &E,
    lengths: &[usize],
    delta: f64,
    budget: u128,
) -> Result<Realizability> {
    let mut worst = vec![0.0f64; fam.len()];
    for &len in lengths {
        for (w, r) in worst.iter_mut().zip(family_risks(fam, ens, len, budget)?) {
            *w = w.max(r);
        }
    }
    let witness = first_within(&worst, delta);
    Ok(Realizability { holds: witness.is_some(), witness, worst })
}

fn same_label(a: &LabelVec, b: &LabelVec) -> bool {
    a.dim() == b.dim() && a.0.iter().zip(&b.0).all(|(x, y)| (x - y).abs() <= TOL)
}

/// Some (g0, g1) selects exactly S* with a finite score and reproduces Y,
/// except on mass at most `delta` at every length.
pub fn check_strong_realizability<E: Ensemble + ?Sized>(
    fam: &HypothesisFamily<E::Sym>,
    ens: &E,
    lengths: &[usize],
    delta: f64,
    budget: u128,
) -> Result<Realizability> {
    let k = fam.k();
    let n1 = fam.value_fns().len();
    let mut worst = vec![0.0f64; fam.len()];
    for &len in lengths {
        let parts = fold_support(
            ens,
            len,
            budget,
            || vec![0.0f64; fam.len()],
            |acc, a| {
                let mut buf: Vec<E::Sym> = a.sstar.indices().iter().map(|&i| a.x[i - 1].clone()).collect();
                for (i0, g0) in fam.score_fns().iter().enumerate() {
                    let w = AttentionWeights::compute(g0, a.x, k)?;
                    let mut finite = w.finite_subsets();
                    let selects = matches!((finite.next(), finite.next()), (Some(s), None) if s == a.sstar.indices());
                    for (i1, g1) in fam.value_fns().iter().enumerate() {
                        let ok = selects && same_label(&g1.value(&buf)?, a.y);
                        if !ok {
                            acc[i0 * n1 + i1] += a.prob;
                        }
                    }
                }
                buf.clear();
                Ok(())
            },
        )?;
        let mut mass = vec![0.0; fam.len()];
        for p in parts {
            for (m, v) in mass.iter_mut().zip(p) {
                *m += v;
            }
        }
        for (w, m) in worst.iter_mut().zip(mass) {
            *w = w.max(m);
        }
    }
    let witness = first_within(&worst, delta);
    Ok(Realizability { holds: witness.is_some(), witness, worst })
}

/// A theorem hypothesis that failed its gate, with the evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFailure {
    pub assumption: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub delta: f64,
    pub window: usize,
    pub eta_train: f64,
    pub eta_test: f64,
    pub report: LGReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TheoremOutcome {
    Checked(TheoremReport),
    Rejected(AssumptionFailure),
}

impl TheoremOutcome {
    pub fn report(&self) -> Option<&TheoremReport> {
        match self {
            TheoremOutcome::Checked(r) => Some(r),
            TheoremOutcome::Rejected(_) => None,
        }
    }
}

pub const GATE_DIVISIBILITY: &str = "L_local | L̄ − L";
pub const GATE_SIZE: &str = "L ≥ 4·L_local";
pub const GATE_LOCALITY: &str = "locality";
pub const GATE_RELATIVITY: &str = "relativity";
pub const GATE_COVERAGE: &str = "coverage";
pub const GATE_REALIZABILITY: &str = "realizability";

fn reject(assumption: &str, detail: String) -> Result<TheoremOutcome> {
    Ok(TheoremOutcome::Rejected(AssumptionFailure { assumption: assumption.to_string(), detail }))
}

/// Gates every hypothesis of the theorem, then measures L̄-risk of the
/// minimizer against ε = max(η_L·η_L̄·L·L̄²·δ, 1e−9).
///
/// Locality and relativity are checked exhaustively on subsets of `[L̄]`
/// over the ensemble's alphabet; realizability at `delta` on the training
/// lengths and at L̄.
pub fn verify_theorem_bound<E: Ensemble + ?Sized>(
    fam: &HypothesisFamily<E::Sym>,
    ens: &E,
    train_len: usize,
    test_len: usize,
    delta: f64,
    window: usize,
    budget: u128,
) -> Result<TheoremOutcome>
where
    E::Sym: Symbol,
{
    if window == 0 || test_len <= train_len {
        return Err(Error::param("need L_local ≥ 1 and L̄ > L"));
    }
    if (test_len - train_len) % window != 0 {
        return reject(GATE_DIVISIBILITY, format!("{window} does not divide {} − {}", test_len, train_len));
    }
    if train_len < 4 * window {
        return reject(GATE_SIZE, format!("L = {train_len} < 4·{window}"));
    }
    let k = fam.k();
    let alphabet = ens.alphabet(test_len);
    for g0 in fam.score_fns() {
        let c = check_local(g0, k, window, test_len, &alphabet, budget)?;
        if let Some((s, x)) = c.witness {
            return reject(GATE_LOCALITY, format!("{} is finite on {s} with tokens {x:?}", g0.name()));
        }
    }
    for g0 in fam.score_fns() {
        let c = check_relative(g0, k, test_len, &alphabet, budget)?;
        if let Some((s, d, x)) = c.witness {
            return reject(GATE_RELATIVITY, format!("{} changes under shift {d} of {s} with tokens {x:?}", g0.name()));
        }
    }
    let eta_train = coverage_eta(ens, train_len, window)?;
    let eta_test = coverage_eta(ens, test_len, window)?;
    for c in [&eta_train, &eta_test] {
        if !c.is_finite() {
            let w = c.witness.as_ref().map(|w| format!("{w:?}")).unwrap_or_default();
            return reject(GATE_COVERAGE, format!("η at length {} is infinite: {w}", c.len));
        }
    }
    let mut lengths: Vec<usize> = training_lengths(train_len).collect();
    lengths.push(test_len);
    let r = check_realizability(fam, ens, &lengths, delta, budget)?;
    if !r.holds {
        let best = r.worst.iter().cloned().fold(f64::INFINITY, f64::min);
        return reject(
            GATE_REALIZABILITY,
            format!("best worst-case risk {best} exceeds δ = {delta} on lengths {lengths:?}"),
        );
    }
    let bound = eta_train.eta * eta_test.eta * train_len as f64 * (test_len as f64).powi(2) * delta;
    let mut report = check_length_generalization(fam, ens, train_len, test_len, bound.max(1e-9), budget)?;
    report.bound = Some(bound);
    Ok(TheoremOutcome::Checked(TheoremReport {
        delta,
        window,
        eta_train: eta_train.eta,
        eta_test: eta_test.eta,
        report,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{LabelSpace, Subset, Token};
    use crate::ensembles::{counterexample, Assumption};
    use crate::ensembles::{enumerate_support, make_shifted_ensemble, Components, PlantedEnsemble, PosLaw, QPos};
    use crate::hypotheses::{ScoreFn, ValueFn};
    use std::collections::BTreeMap;

    const BUDGET: u128 = 1 << 26;

    fn exact() -> RiskMode {
        RiskMode::Exact { budget: BUDGET }
    }

    fn s(v: &[usize]) -> Subset {
        Subset::new(v.to_vec()).unwrap()
    }

    /// Marker 3 followed by a payload bit; the label is the payload.
    fn marker_parts(flip: f64) -> Components {
        Components {
            k: 2,
            space: LabelSpace::unit_interval(),
            vocab: vec![1, 2, 3],
            mu: vec![0.5, 0.5, 0.0],
            qvoc: vec![(vec![3, 1], 0.5), (vec![3, 2], 0.5)],
            gstar: ValueFn::rule("payload", move |z: &[Token]| LabelVec::scalar(if z[1] == 2 { 1.0 } else { flip })),
        }
    }

    fn marker_ensemble(flip: f64) -> PlantedEnsemble {
        make_shifted_ensemble(PosLaw::point(s(&[1, 2])), 2, marker_parts(flip)).unwrap()
    }

    fn marker_family() -> HypothesisFamily<Token> {
        let adjacent = ScoreFn::rule(
            "adj",
            |s: &[usize], x: &[Token]| {
                if x[0] == 3 && s[1] - s[0] == 1 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            },
        )
        .declare_local(2)
        .declare_relative();
        let flat =
            ScoreFn::rule("flat", |s: &[usize], _: &[Token]| if s[1] - s[0] <= 2 { 0.0 } else { f64::NEG_INFINITY });
        let second = ValueFn::rule("second", |x: &[Token]| LabelVec::scalar(if x[1] == 2 { 1.0 } else { 0.0 }));
        let half = ValueFn::constant("half", LabelVec::scalar(0.5));
        HypothesisFamily::new(2, vec![flat, adjacent], vec![half, second]).unwrap()
    }

    /// Direct transcription of E[loss] over the enumerated atoms.
    fn risk_oracle(h: &FunctionalAttention<Token>, ens: &PlantedEnsemble, len: usize) -> f64 {
        enumerate_support(ens, len, BUDGET)
            .unwrap()
            .iter()
            .map(|a| a.prob * (h.evaluate(&a.x).unwrap().0[0] - a.y.0[0]).abs())
            .sum()
    }

    #[test]
    fn realizer_has_zero_risk() {
        let ens = marker_ensemble(0.0);
        let fam = marker_family();
        let hstar = fam.member(3);
        for len in 2..=9 {
            assert!(population_risk(&hstar, &ens, len, exact()).unwrap().value <= 1e-9);
        }
    }

    #[test]
    fn exact_risk_matches_oracle() {
        let ens = marker_ensemble(0.0);
        let fam = marker_family();
        for (i, h) in fam.members().enumerate() {
            for len in [2, 5, 7] {
                let r = population_risk(&h, &ens, len, exact()).unwrap();
                assert!((r.value - risk_oracle(&h, &ens, len)).abs() < 1e-12, "member {i} len {len}");
                assert!(r.samples.is_none() && r.std_err.is_none());
            }
        }
        let rs = family_risks(&fam, &ens, 6, BUDGET).unwrap();
        for (i, h) in fam.members().enumerate() {
            assert!((rs[i] - risk_oracle(&h, &ens, 6)).abs() < 1e-12);
        }
    }

    #[test]
    fn locality_counterexample_risks() {
        let ce = counterexample(Assumption::Locality, 4).unwrap();
        let h = ce.family.member(ce.designated);
        for len in training_lengths(4) {
            assert!(population_risk(&h, &ce.ensemble, len, exact()).unwrap().value <= 1e-9);
        }
        let fail = population_risk(&h, &ce.ensemble, ce.fail_len, exact()).unwrap().value;
        assert!(fail >= 0.1, "{fail}");
    }

    #[test]
    fn training_objective_is_mean_of_lengths() {
        assert_eq!(training_lengths(4).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(training_lengths(7).collect::<Vec<_>>(), vec![4, 5, 6, 7]);
        let ens = marker_ensemble(0.0);
        let h = marker_family().member(1);
        let mean = (4..=8).map(|l| risk_oracle(&h, &ens, l)).sum::<f64>() / 5.0;
        assert!((training_objective(&h, &ens, 8, BUDGET).unwrap() - mean).abs() < 1e-12);
        assert!(training_objective(&marker_family().member(3), &ens, 8, BUDGET).unwrap() <= 1e-9);
    }

    #[test]
    fn minimizer_tie_break_and_injection() {
        let ens = marker_ensemble(0.0);
        let fam = marker_family();
        let single =
            HypothesisFamily::new(2, vec![fam.score_fns()[0].clone()], vec![fam.value_fns()[0].clone()]).unwrap();
        assert_eq!(risk_minimize(&single, &ens, 6, BUDGET).unwrap().index, 0);

        let m = risk_minimize(&fam, &ens, 6, BUDGET).unwrap();
        assert_eq!(m.index, 3);
        for o in &m.objectives {
            assert!(m.objective <= *o);
        }

        let ce = counterexample(Assumption::Locality, 4).unwrap();
        let m = risk_minimize(&ce.family, &ce.ensemble, 4, BUDGET).unwrap();
        assert_eq!(m.index, ce.designated);
        assert_eq!(ce.family.member_name(m.index), "h[g00,g1]");

        // A strictly better member wins wherever it is listed.
        for pos in 0..=2 {
            let mut g0s = vec![fam.score_fns()[0].clone(), fam.score_fns()[0].clone()];
            g0s.insert(pos, fam.score_fns()[1].clone());
            let f = HypothesisFamily::new(2, g0s, vec![fam.value_fns()[1].clone()]).unwrap();
            assert_eq!(risk_minimize(&f, &ens, 6, BUDGET).unwrap().index, pos);
        }
    }

    #[test]
    fn length_generalization_verdicts() {
        let ens = marker_ensemble(0.0);
        let fam = marker_family();
        let r = check_length_generalization(&fam, &ens, 8, 16, 1e-9, BUDGET).unwrap();
        assert!(r.holds && r.test_risk <= 1e-9);

        let ce = counterexample(Assumption::Locality, 4).unwrap();
        let r = check_length_generalization(&ce.family, &ce.ensemble, 4, ce.fail_len, 0.1, BUDGET).unwrap();
        assert!(!r.holds);
        let r = check_length_generalization(&ce.family, &ce.ensemble, 4, ce.fail_len, 1.0, BUDGET).unwrap();
        assert!(r.holds);
        assert!(check_length_generalization(&fam, &ens, 8, 8, 0.1, BUDGET).is_err());
    }

    #[test]
    fn realizability_checks() {
        let ens = marker_ensemble(0.0);
        let fam = marker_family();
        let lens = [3, 4, 5, 6];
        let r = check_realizability(&fam, &ens, &lens, 0.0, BUDGET).unwrap();
        assert_eq!(r.witness, Some(3));
        let strong = check_strong_realizability(&fam, &ens, &lens, 0.0, BUDGET).unwrap();
        assert_eq!(strong.witness, Some(3));
        assert!(check_realizability(&fam, &ens, &lens, 1.0, BUDGET).unwrap().holds);

        // `flat` is finite on several subsets per atom: never strongly realizing.
        let flat = HypothesisFamily::new(2, vec![fam.score_fns()[0].clone()], fam.value_fns().to_vec()).unwrap();
        assert!(!check_strong_realizability(&flat, &ens, &lens, 0.0, BUDGET).unwrap().holds);

        let ce = counterexample(Assumption::Realizability, 4).unwrap();
        let r = check_realizability(&ce.family, &ce.ensemble, &[ce.fail_len], 0.0, BUDGET).unwrap();
        assert!(!r.holds);
    }

    #[test]
    fn strong_implies_plain() {
        let fam = marker_family();
        for flip in [0.0, 0.02, 0.5] {
            let ens = marker_ensemble(flip);
            for delta in [0.0, 0.01, 0.25, 0.5] {
                let lens = [4, 6];
                let strong = check_strong_realizability(&fam, &ens, &lens, delta, BUDGET).unwrap();
                let plain = check_realizability(&fam, &ens, &lens, delta, BUDGET).unwrap();
                if strong.holds {
                    assert!(plain.holds, "flip {flip} delta {delta}");
                }
            }
        }
    }

    fn perturbed_instance() -> (PlantedEnsemble, HypothesisFamily<Token>) {
        (marker_ensemble(0.02), marker_family())
    }

    #[test]
    fn theorem_bound_gates_and_values() {
        let ens = marker_ensemble(0.0);
        let fam = HypothesisFamily::new(
            2,
            vec![marker_family().score_fns()[1].clone()],
            marker_family().value_fns().to_vec(),
        )
        .unwrap();
        let out = verify_theorem_bound(&fam, &ens, 8, 12, 0.0, 2, BUDGET).unwrap();
        let r = out.report().expect("all gates pass");
        assert_eq!(r.report.bound, Some(0.0));
        assert!(r.report.test_risk <= 1e-9 && r.report.holds);

        match verify_theorem_bound(&fam, &ens, 6, 12, 0.0, 2, BUDGET).unwrap() {
            TheoremOutcome::Rejected(f) => assert_eq!(f.assumption, GATE_SIZE),
            other => panic!("{other:?}"),
        }
        match verify_theorem_bound(&fam, &ens, 8, 11, 0.0, 2, BUDGET).unwrap() {
            TheoremOutcome::Rejected(f) => assert_eq!(f.assumption, GATE_DIVISIBILITY),
            other => panic!("{other:?}"),
        }
        let wide = ScoreFn::rule("wide", |_: &[usize], _: &[Token]| 0.0);
        let f = HypothesisFamily::new(2, vec![wide], marker_family().value_fns().to_vec()).unwrap();
        match verify_theorem_bound(&f, &ens, 8, 12, 0.0, 2, BUDGET).unwrap() {
            TheoremOutcome::Rejected(x) => assert_eq!(x.assumption, GATE_LOCALITY),
            other => panic!("{other:?}"),
        }
        let anchored = ScoreFn::rule(
            "anchored",
            |s: &[usize], _: &[Token]| {
                if s[1] - s[0] == 1 {
                    s[0] as f64
                } else {
                    f64::NEG_INFINITY
                }
            },
        );
        let f = HypothesisFamily::new(2, vec![anchored], marker_family().value_fns().to_vec()).unwrap();
        match verify_theorem_bound(&f, &ens, 8, 12, 0.0, 2, BUDGET).unwrap() {
            TheoremOutcome::Rejected(x) => assert_eq!(x.assumption, GATE_RELATIVITY),
            other => panic!("{other:?}"),
        }
        match verify_theorem_bound(&fam, &perturbed_instance().0, 8, 12, 0.0, 2, BUDGET).unwrap() {
            TheoremOutcome::Rejected(x) => assert_eq!(x.assumption, GATE_REALIZABILITY),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perturbed_instance_respects_bound() {
        let (ens, fam) = perturbed_instance();
        let delta = 0.01;
        let out = verify_theorem_bound(&fam, &ens, 8, 10, delta, 2, BUDGET).unwrap();
        let r = out.report().expect("gates pass at δ = 0.01");
        assert!((r.eta_train - 7.0).abs() < 1e-9 && (r.eta_test - 9.0).abs() < 1e-9);
        let bound = r.report.bound.unwrap();
        assert!((bound - 7.0 * 9.0 * 8.0 * 100.0 * delta).abs() < 1e-9);
        assert!(r.report.test_risk <= bound);
        // The realizer errs by 0.02 on half the mass.
        assert!((r.report.test_risk - delta).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_tracks_exact() {
        let ens = marker_ensemble(0.0);
        let h = marker_family().member(1);
        let truth = population_risk(&h, &ens, 5, exact()).unwrap().value;
        let mut inside = 0;
        for seed in 0..100 {
            let r = population_risk(&h, &ens, 5, RiskMode::MonteCarlo { samples: 400, seed }).unwrap();
            assert_eq!(r.samples, Some(400));
            if (r.value - truth).abs() <= 4.0 * r.std_err.unwrap() {
                inside += 1;
            }
        }
        assert!(inside >= 99, "{inside}");
        let a = population_risk(&h, &ens, 5, RiskMode::MonteCarlo { samples: 50, seed: 7 }).unwrap();
        let b = population_risk(&h, &ens, 5, RiskMode::MonteCarlo { samples: 50, seed: 7 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_exceeded_in_exact_mode() {
        let ens = marker_ensemble(0.0);
        let h = marker_family().member(3);
        assert!(matches!(
            population_risk(&h, &ens, 8, RiskMode::Exact { budget: 10 }),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn relabeling_tokens_preserves_risk() {
        // Swap background tokens 1 and 2 everywhere, including inside the tables.
        let swap = |t: Token| match t {
            1 => 2,
            2 => 1,
            t => t,
        };
        let build = |relabel: bool| {
            let f = move |t: Token| if relabel { swap(t) } else { t };
            let parts = Components {
                k: 2,
                space: LabelSpace::unit_interval(),
                vocab: vec![1, 2, 3],
                mu: vec![0.3, 0.7, 0.0],
                qvoc: vec![(vec![3, f(1)], 0.4), (vec![3, f(2)], 0.6)],
                gstar: ValueFn::rule("payload", move |z: &[Token]| {
                    LabelVec::scalar(if z[1] == f(2) { 1.0 } else { 0.0 })
                }),
            };
            let mu = if relabel { vec![0.7, 0.3, 0.0] } else { vec![0.3, 0.7, 0.0] };
            let ens = make_shifted_ensemble(PosLaw::point(s(&[1, 2])), 2, Components { mu, ..parts }).unwrap();
            let g0 = ScoreFn::rule("lean", move |s: &[usize], x: &[Token]| {
                if s[1] - s[0] > 2 {
                    f64::NEG_INFINITY
                } else if x[1] == f(1) {
                    1.0
                } else {
                    0.0
                }
            });
            let g1 = ValueFn::rule("second", move |x: &[Token]| LabelVec::scalar(if x[1] == f(2) { 0.9 } else { 0.1 }));
            (ens, FunctionalAttention::new(g0, g1, 2).unwrap())
        };
        let (e0, h0) = build(false);
        let (e1, h1) = build(true);
        for len in 2..=7 {
            let a = population_risk(&h0, &e0, len, exact()).unwrap().value;
            let b = population_risk(&h1, &e1, len, exact()).unwrap().value;
            assert!((a - b).abs() < 1e-12, "len {len}");
        }
    }

    #[test]
    fn table_position_law_is_supported() {
        let mut t = BTreeMap::new();
        t.insert(2, PosLaw::point(s(&[1, 2])));
        t.insert(3, PosLaw::uniform([s(&[1, 2]), s(&[2, 3])]));
        let ens = PlantedEnsemble::new(marker_parts(0.0), QPos::Table(t)).unwrap();
        let h = marker_family().member(3);
        assert!(training_objective(&h, &ens, 3, BUDGET).unwrap() <= 1e-9);
        assert!(training_objective(&h, &ens, 5, BUDGET).is_err());
    }
}
