//! Numeric checks of the ratio-sum and hybrid inequalities, and the
//! single-head equivalence sweep.

use anyhow::{bail, ensure, Result};
use rand::Rng;
use serde::Serialize;

use lgsparse::hypotheses::{attention_head, head_to_hypothesis, AttentionHeadParams};
use lgsparse::rng::{seeded, LabRng};
use lgsparse::{Norm, Token, TOL};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub trials: usize,
    /// Largest excess of the left side over the bound; ≤ `tolerance` iff passed.
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl LemmaReport {
    fn new(lemma: &str, trials: usize, max_violation: f64, tolerance: f64) -> Self {
        LemmaReport { lemma: lemma.to_string(), trials, max_violation, tolerance, passed: max_violation <= tolerance }
    }
}

fn dist(u: &[f64], v: &[f64]) -> f64 {
    Norm::L2.of(&u.iter().zip(v).map(|(a, b)| a - b).collect::<Vec<_>>())
}

fn ratio(num: &[f64], den: f64) -> Vec<f64> {
    num.iter().map(|x| x / den).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioSum {
    pub eps: Vec<f64>,
    pub combined: f64,
    /// `combined − Σ ε_i`.
    pub violation: f64,
}

/// ε_i = ‖a/b − (q_i + a)/(p_i + b)‖ and the combined deviation
/// ‖a/b − (Σq + a)/(Σp + b)‖.
pub fn ratio_sum(a: &[f64], b: f64, p: &[f64], q: &[Vec<f64>]) -> Result<RatioSum> {
    ensure!(b > 0.0, "b must be positive, got {b}");
    ensure!(p.iter().all(|&x| x > 0.0), "every p_i must be positive");
    ensure!(p.len() == q.len(), "p and q have different lengths");
    ensure!(q.iter().all(|v| v.len() == a.len()), "q_i and a have different dimensions");
    let base = ratio(a, b);
    let shifted = |qi: &[f64], pi: f64| -> Vec<f64> { qi.iter().zip(a).map(|(x, y)| (x + y) / (pi + b)).collect() };
    let eps: Vec<f64> = p.iter().zip(q).map(|(&pi, qi)| dist(&base, &shifted(qi, pi))).collect();
    let mut qsum = a.to_vec();
    for qi in q {
        for (s, x) in qsum.iter_mut().zip(qi) {
            *s += x;
        }
    }
    let combined = dist(&base, &ratio(&qsum, p.iter().sum::<f64>() + b));
    let violation = combined - eps.iter().sum::<f64>();
    Ok(RatioSum { eps, combined, violation })
}

pub fn check_lemma_ratio_sum(a: &[f64], b: f64, p: &[f64], q: &[Vec<f64>]) -> Result<LemmaReport> {
    let r = ratio_sum(a, b, p, q)?;
    Ok(LemmaReport::new("ratio_sum", 1, r.violation, TOL))
}

/// Random instances with d ≤ 3 and L ≤ 10; entries of a, q in [−1, 1],
/// b and p_i in (0, 2].
pub fn ratio_sum_sweep(trials: usize, rng: &mut LabRng) -> Result<LemmaReport> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let d = rng.gen_range(1..=3);
        let l = rng.gen_range(1..=10);
        let pos = |rng: &mut LabRng| 2.0 - rng.gen::<f64>() * 2.0;
        let vec = |rng: &mut LabRng| (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect::<Vec<f64>>();
        let a = vec(rng);
        let b = pos(rng);
        let p: Vec<f64> = (0..l).map(|_| pos(rng)).collect();
        let q: Vec<Vec<f64>> = (0..l).map(|_| vec(rng)).collect();
        worst = worst.max(ratio_sum(&a, b, &p, &q)?.violation);
    }
    Ok(LemmaReport::new("ratio_sum", trials, worst, TOL))
}

type Pair<T> = Box<dyn Fn(f64, f64) -> T + Send + Sync>;

/// Maps of the hybrid inequality with scalar Z: A_i = f(Z_i, Z_{i−1}),
/// B_i = g(Z_i, Z_{i−1}), A_0 = f0(Z_1, Z_0), B_0 = g0(Z_1, Z_0).
pub struct HybridInstance {
    pub name: String,
    pub f: Pair<Vec<f64>>,
    pub g: Pair<f64>,
    pub f0: Pair<Vec<f64>>,
    pub g0: Pair<f64>,
    pub draw: Box<dyn Fn(&mut LabRng) -> f64 + Send + Sync>,
}

/// Z ~ U(0, 1); f(z, z′) = (z, z·z′), g = 1 + z + z′, f0 = (z0, 1 − z0), g0 = 1 + z0.
pub fn default_hybrid() -> HybridInstance {
    HybridInstance {
        name: "uniform".into(),
        f: Box::new(|z, zp| vec![z, z * zp]),
        g: Box::new(|z, zp| 1.0 + z + zp),
        f0: Box::new(|_, z0| vec![z0, 1.0 - z0]),
        g0: Box::new(|_, z0| 1.0 + z0),
        draw: Box::new(|rng| rng.gen::<f64>()),
    }
}

/// Constant maps: every ratio is the same.
pub fn constant_hybrid() -> HybridInstance {
    HybridInstance {
        name: "constant".into(),
        f: Box::new(|_, _| vec![0.5, 0.25]),
        g: Box::new(|_, _| 1.0),
        f0: Box::new(|_, _| vec![1.0, 0.5]),
        g0: Box::new(|_, _| 2.0),
        draw: Box::new(|rng| rng.gen::<f64>()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Estimate { mean, std_err: (var / n).sqrt() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HybridStep {
    pub i: usize,
    pub conclusion: Estimate,
    pub bound: f64,
    /// Standard error of `conclusion − 3iε`.
    pub std_err: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HybridReport {
    pub instance: String,
    pub samples: usize,
    pub premises: [Estimate; 2],
    pub epsilon: f64,
    pub steps: Vec<HybridStep>,
    pub report: LemmaReport,
}

/// Monte-Carlo estimates of both premises and of the conclusion for every
/// i ≤ `i_max`; step i holds if its mean ≤ 3iε + 5·std_err.
pub fn check_lemma_hybrid(
    inst: &HybridInstance,
    i_max: usize,
    samples: usize,
    rng: &mut LabRng,
) -> Result<HybridReport> {
    ensure!(i_max >= 1 && samples >= 2, "need i_max >= 1 and at least two samples");
    let depth = i_max.max(2);
    let mut prem = [Vec::with_capacity(samples), Vec::with_capacity(samples)];
    let mut concl = vec![Vec::with_capacity(samples); i_max];
    let mut z = vec![0.0; depth + 1];
    for _ in 0..samples {
        for zi in z.iter_mut() {
            *zi = (inst.draw)(rng);
        }
        let mut num = (inst.f0)(z[1], z[0]);
        let mut den = (inst.g0)(z[1], z[0]);
        if den == 0.0 {
            bail!("degenerate draw: B_0 = 0");
        }
        let base = ratio(&num, den);
        let mut partial = vec![base.clone()];
        for i in 1..=depth {
            let a = (inst.f)(z[i], z[i - 1]);
            ensure!(a.len() == num.len(), "f and f0 have different dimensions");
            for (s, x) in num.iter_mut().zip(&a) {
                *s += x;
            }
            den += (inst.g)(z[i], z[i - 1]);
            if den == 0.0 {
                bail!("degenerate draw: B_0 + … + B_{i} = 0");
            }
            partial.push(ratio(&num, den));
        }
        prem[0].push(dist(&partial[0], &partial[1]));
        prem[1].push(dist(&partial[1], &partial[2]));
        for i in 1..=i_max {
            concl[i - 1].push(dist(&base, &partial[i]));
        }
    }
    let premises = [estimate(&prem[0]), estimate(&prem[1])];
    let top = if premises[0].mean >= premises[1].mean { 0 } else { 1 };
    let epsilon = premises[top].mean;
    let se_eps = premises[top].std_err;
    let mut worst = f64::NEG_INFINITY;
    let steps = concl
        .iter()
        .enumerate()
        .map(|(j, xs)| {
            let i = j + 1;
            let c = estimate(xs);
            let bound = 3.0 * i as f64 * epsilon;
            let std_err = (c.std_err.powi(2) + (3.0 * i as f64 * se_eps).powi(2)).sqrt();
            let excess = c.mean - bound - 5.0 * std_err;
            worst = worst.max(excess);
            HybridStep { i, conclusion: c, bound, std_err, holds: excess <= 0.0 }
        })
        .collect();
    Ok(HybridReport {
        instance: inst.name.clone(),
        samples,
        premises,
        epsilon,
        steps,
        report: LemmaReport::new("hybrid", samples, worst, 0.0),
    })
}

/// Random model dimension, head dimension and vocabulary, entries in [−2, 2].
pub fn random_head(rng: &mut LabRng) -> AttentionHeadParams {
    let d = rng.gen_range(1..=4);
    let h = rng.gen_range(1..=4);
    let vocab = rng.gen_range(2..=5);
    let mut m = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-2.0..=2.0)).collect()).collect()
    };
    let key = m(h, d);
    let query = m(h, d);
    let value = m(h, d);
    let out = m(d, h);
    let embed = m(d, vocab);
    let h_query = m(1, d).remove(0);
    AttentionHeadParams { key, query, value, out, embed, h_query }
}

/// Functional-attention evaluation of the converted head against the head
/// formula on random inputs of length ≤ 8.
pub fn head_equivalence(trials: usize, seed: u64) -> Result<LemmaReport> {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = random_head(&mut rng);
        let h = head_to_hypothesis(&p)?;
        let len = rng.gen_range(1..=8);
        let x: Vec<Token> = (0..len).map(|_| rng.gen_range(0..p.vocab_size()) as Token).collect();
        let a = h.evaluate(&x)?;
        let b = attention_head(&p, &x)?;
        worst = worst.max(dist(a.as_slice(), b.as_slice()));
    }
    Ok(LemmaReport::new("attention_head", trials, worst, TOL))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_sum_examples() {
        let r = ratio_sum(&[1.0], 1.0, &[1.0], &[vec![0.0]]).unwrap();
        assert!((r.eps[0] - 0.5).abs() < 1e-15 && (r.combined - 0.5).abs() < 1e-15);
        assert!(r.violation.abs() < 1e-15);

        // q_i = (p_i / b)·a leaves the ratio unchanged.
        let a = [0.3, -0.6];
        let b = 1.5;
        let p = [0.2, 1.1, 0.7];
        let q: Vec<Vec<f64>> = p.iter().map(|pi| a.iter().map(|x| pi / b * x).collect()).collect();
        let r = ratio_sum(&a, b, &p, &q).unwrap();
        assert!(r.eps.iter().all(|e| e.abs() < 1e-15) && r.combined < 1e-15);

        assert!(ratio_sum(&[1.0], 0.0, &[1.0], &[vec![0.0]]).is_err());
        assert!(ratio_sum(&[1.0], 1.0, &[-1.0], &[vec![0.0]]).is_err());
        assert!(check_lemma_ratio_sum(&[1.0], 1.0, &[1.0], &[vec![0.0]]).unwrap().passed);
    }

    #[test]
    fn ratio_sum_sweep_has_no_violation() {
        let r = ratio_sum_sweep(2000, &mut seeded(4)).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn hybrid_constant_and_first_step() {
        let r = check_lemma_hybrid(&constant_hybrid(), 3, 100, &mut seeded(0)).unwrap();
        assert!(r.report.passed);
        // A_0/B_0 = (0.5, 0.25) equals every partial ratio.
        assert!(r.steps.iter().all(|s| s.conclusion.mean < 1e-15));

        let r = check_lemma_hybrid(&default_hybrid(), 4, 2000, &mut seeded(1)).unwrap();
        assert_eq!(r.steps[0].conclusion, r.premises[0]);
        assert!(r.report.passed, "{r:?}");
    }

    #[test]
    fn hybrid_reports_degenerate_draws() {
        let mut inst = constant_hybrid();
        inst.g0 = Box::new(|_, _| 0.0);
        assert!(check_lemma_hybrid(&inst, 2, 10, &mut seeded(0)).is_err());
    }

    #[test]
    fn head_sweep_agrees() {
        let r = head_equivalence(50, 3).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
