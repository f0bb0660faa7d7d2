//! The four constructions showing each assumption of the length
//! generalization theorem is needed, plus adversarial point-mass extensions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Components, PlantedEnsemble, PosLaw, QPos};
use crate::domain::{diameter, LabelSpace, LabelVec, Subset, Token};
use crate::error::{Error, Result};
use crate::hypotheses::{for_each_word, FunctionalAttention, HypothesisFamily, ScoreFn, Symbol, ValueFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    Locality,
    Relative,
    Realizability,
    Coverage,
}

impl Assumption {
    pub const ALL: [Assumption; 4] =
        [Assumption::Locality, Assumption::Relative, Assumption::Realizability, Assumption::Coverage];

    pub fn name(self) -> &'static str {
        match self {
            Assumption::Locality => "locality",
            Assumption::Relative => "relative",
            Assumption::Realizability => "realizability",
            Assumption::Coverage => "coverage",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Assumption {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Assumption::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::param(format!("unknown counterexample variant `{s}`")))
    }
}

/// One construction with the roles its proof assigns to family members.
#[derive(Clone, Debug)]
pub struct Counterexample {
    pub dropped: Assumption,
    pub train_len: usize,
    pub window: usize,
    pub ensemble: PlantedEnsemble,
    pub family: HypothesisFamily<Token>,
    /// Index of the minimizer the proof predicts.
    pub designated: usize,
    /// Member with zero risk at every length, when one exists.
    pub realizer: Option<usize>,
    /// Member compared against the designated one for the worst-in-class gap.
    pub comparator: Option<usize>,
    /// Length at which the designated minimizer is shown to fail.
    pub fail_len: usize,
}

const NEG: f64 = f64::NEG_INFINITY;

fn is_22(x: &[Token]) -> bool {
    x == [2, 2]
}

fn pair(a: usize, b: usize) -> Subset {
    Subset::new(vec![a, b]).expect("a < b")
}

fn adjacent_sets(len: usize) -> impl Iterator<Item = Subset> {
    (1..len).map(|i| pair(i, i + 1))
}

fn gap2_sets(len: usize) -> impl Iterator<Item = Subset> {
    (1..len.saturating_sub(1)).map(|i| pair(i, i + 2))
}

/// Builds the construction for the named dropped assumption with training
/// length `train_len` (k = 2, V = {1, 2}, window 2).
pub fn counterexample(which: Assumption, train_len: usize) -> Result<Counterexample> {
    let big_l = train_len;
    if big_l < 4 {
        return Err(Error::param("counterexamples need L >= 4"));
    }
    let g1 = ValueFn::rule("g1", |x: &[Token]| LabelVec::scalar(if is_22(x) { 1.0 } else { 0.0 }));
    let adjacent_law = |len: usize| (len >= 2).then(|| PosLaw::uniform(adjacent_sets(len)));

    let (qpos, score_fns, designated, realizer, comparator) = match which {
        Assumption::Locality => {
            let qpos = QPos::generated(format!("locality(L={big_l})"), move |len| {
                if len < 2 {
                    None
                } else if len <= big_l {
                    Some(PosLaw::uniform(adjacent_sets(len)))
                } else {
                    let far = (1..=len - big_l).map(|a| pair(a, a + big_l));
                    Some(PosLaw::uniform(adjacent_sets(len).chain(far)))
                }
            });
            let g00 = ScoreFn::rule(
                "g00",
                move |s: &[usize], x: &[Token]| {
                    if is_22(x) || diameter(s) >= big_l {
                        0.0
                    } else {
                        NEG
                    }
                },
            )
            .declare_relative();
            let g01 = ScoreFn::content("g01", |x: &[Token]| if is_22(x) { 0.0 } else { NEG }).declare_relative();
            (qpos, vec![g00, g01], 0, Some(1), None)
        }
        Assumption::Relative => {
            let qpos = QPos::generated("adjacent", adjacent_law);
            let g00 =
                ScoreFn::rule("g00", |s: &[usize], x: &[Token]| if is_22(x) && diameter(s) == 1 { 0.0 } else { NEG })
                    .declare_local(2)
                    .declare_relative();
            let g01 = ScoreFn::rule("g01", move |s: &[usize], x: &[Token]| {
                let d = diameter(s);
                if (is_22(x) && d == 1) || (d == 2 && s[1] > big_l) {
                    0.0
                } else {
                    NEG
                }
            })
            .declare_local(2);
            // The proof's minimizer is g01, so it goes first.
            (qpos, vec![g01, g00], 0, Some(1), None)
        }
        Assumption::Realizability => {
            let qpos = QPos::generated(format!("realizability(L={big_l})"), move |len| {
                if len < 2 {
                    None
                } else if len <= big_l {
                    Some(PosLaw::uniform(adjacent_sets(len)))
                } else {
                    let near = 1.0 / (10.0 * (len - 1) as f64);
                    let far = 9.0 / (10.0 * (len - 2) as f64);
                    Some(PosLaw::new(adjacent_sets(len).map(|s| (s, near)).chain(gap2_sets(len).map(|s| (s, far)))))
                }
            });
            let g00 =
                ScoreFn::rule("g00", |s: &[usize], x: &[Token]| if is_22(x) && diameter(s) == 1 { 0.0 } else { NEG })
                    .declare_local(2)
                    .declare_relative();
            let g01 =
                ScoreFn::rule("g01", |s: &[usize], x: &[Token]| if is_22(x) && diameter(s) == 2 { 0.0 } else { NEG })
                    .declare_local(2)
                    .declare_relative();
            (qpos, vec![g00, g01], 0, None, Some(1))
        }
        Assumption::Coverage => {
            let qpos = QPos::generated(format!("coverage(L={big_l})"), move |len| {
                if len < 2 {
                    None
                } else if len <= big_l {
                    Some(PosLaw::uniform(adjacent_sets(len)))
                } else {
                    Some(PosLaw::uniform(gap2_sets(len)))
                }
            });
            let g00 =
                ScoreFn::rule("g00", |s: &[usize], x: &[Token]| if is_22(x) && diameter(s) == 1 { 0.0 } else { NEG })
                    .declare_local(2)
                    .declare_relative();
            let g01 = ScoreFn::rule(
                "g01",
                |s: &[usize], x: &[Token]| {
                    if is_22(x) && (1..=2).contains(&diameter(s)) {
                        0.0
                    } else {
                        NEG
                    }
                },
            )
            .declare_local(2)
            .declare_relative();
            (qpos, vec![g00, g01], 0, Some(1), None)
        }
    };

    let parts = Components {
        k: 2,
        space: LabelSpace::unit_interval(),
        vocab: vec![1, 2],
        mu: vec![1.0, 0.0],
        qvoc: vec![(vec![2, 2], 1.0)],
        gstar: g1.clone(),
    };
    Ok(Counterexample {
        dropped: which,
        train_len: big_l,
        window: 2,
        ensemble: PlantedEnsemble::new(parts, qpos)?,
        family: HypothesisFamily::new(2, score_fns, vec![g1])?,
        designated,
        realizer,
        comparator,
        fail_len: 2 * big_l,
    })
}

/// Point mass at the sequence where two hypotheses disagree most.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialExtension<T> {
    pub len: usize,
    pub x: Vec<T>,
    /// `hstar(x)`, the label carried by the point mass.
    pub label: LabelVec,
    pub gap: f64,
}

/// Searches `alphabet^len` for the sequence maximizing the loss between
/// `hstar` and `hhat`; ties go to the first sequence in odometer order.
pub fn adversarial_extension<T: Symbol>(
    hstar: &FunctionalAttention<T>,
    hhat: &FunctionalAttention<T>,
    len: usize,
    alphabet: &[T],
    space: &LabelSpace,
    budget: u128,
) -> Result<AdversarialExtension<T>> {
    let needed = (0..len).fold(1u128, |a, _| a.saturating_mul(alphabet.len() as u128));
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let mut best: Option<AdversarialExtension<T>> = None;
    let mut err = None;
    for_each_word(alphabet, len, |x| {
        if err.is_some() {
            return;
        }
        let step = || -> Result<(LabelVec, f64)> {
            let a = hstar.evaluate(x)?;
            let b = hhat.evaluate(x)?;
            let gap = space.loss(&a, &b)?;
            Ok((a, gap))
        };
        match step() {
            Ok((label, gap)) => {
                if best.as_ref().map_or(true, |b| gap > b.gap) {
                    best = Some(AdversarialExtension { len, x: x.to_vec(), label, gap });
                }
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    best.ok_or_else(|| Error::param("empty alphabet"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TOL;
    use crate::ensembles::{coverage_eta, enumerate_support, Ensemble};
    use crate::hypotheses::{check_local, check_relative};

    fn s(v: &[usize]) -> Subset {
        Subset::new(v.to_vec()).unwrap()
    }

    #[test]
    fn locality_law_has_separated_sets() {
        let ce = counterexample(Assumption::Locality, 4).unwrap();
        let law = ce.ensemble.position_law(6).unwrap();
        assert!(law.prob(&s(&[1, 5])) > 0.0);
        assert!(law.prob(&s(&[2, 6])) > 0.0);
        assert_eq!(law.len(), 5 + 2);
        assert_eq!(ce.ensemble.position_law(4).unwrap().len(), 3);
    }

    #[test]
    fn realizability_law_split() {
        let ce = counterexample(Assumption::Realizability, 4).unwrap();
        let len = 7;
        let law = ce.ensemble.position_law(len).unwrap();
        assert!((law.prob(&s(&[2, 4])) - 9.0 / (10.0 * 5.0)).abs() < TOL);
        assert!((law.prob(&s(&[2, 3])) - 1.0 / (10.0 * 6.0)).abs() < TOL);
        let far: f64 = law.entries().iter().filter(|e| e.0.diameter() == 2).map(|e| e.1).sum();
        assert!((far - 0.9).abs() < TOL);
    }

    #[test]
    fn unknown_variant_name() {
        assert!("bogus".parse::<Assumption>().is_err());
        assert_eq!("coverage".parse::<Assumption>().unwrap(), Assumption::Coverage);
        assert!(counterexample(Assumption::Coverage, 3).is_err());
    }

    #[test]
    fn declared_metadata_matches_checkers() {
        for which in Assumption::ALL {
            let ce = counterexample(which, 5).unwrap();
            for g0 in ce.family.score_fns() {
                let local = check_local(g0, 2, 2, 10, &[1, 2], u128::MAX).unwrap().holds;
                let relative = check_relative(g0, 2, 10, &[1, 2], u128::MAX).unwrap().holds;
                if g0.declared_locality().is_some() {
                    assert!(local, "{which} {}", g0.name());
                }
                if g0.declared_relative() {
                    assert!(relative, "{which} {}", g0.name());
                }
            }
        }
    }

    #[test]
    fn dropped_structural_assumption_fails_its_checker() {
        let loc = counterexample(Assumption::Locality, 4).unwrap();
        assert!(!check_local(&loc.family.score_fns()[0], 2, 2, 8, &[1, 2], u128::MAX).unwrap().holds);
        let rel = counterexample(Assumption::Relative, 4).unwrap();
        assert!(!check_relative(&rel.family.score_fns()[0], 2, 8, &[1, 2], u128::MAX).unwrap().holds);
        let cov = counterexample(Assumption::Coverage, 4).unwrap();
        assert!(coverage_eta(&cov.ensemble, 5, 2).unwrap().eta.is_infinite());
    }

    #[test]
    fn retained_coverage_is_linear_where_claimed() {
        for which in [Assumption::Locality, Assumption::Relative] {
            let ce = counterexample(which, 4).unwrap();
            for len in 2..=12 {
                let eta = coverage_eta(&ce.ensemble, len, 2).unwrap().eta;
                assert!(eta <= 2.0 * len as f64 + TOL, "{which} len {len}: {eta}");
            }
        }
    }

    #[test]
    fn realizability_variant_coverage_is_unbounded_literally() {
        // Gap-2 planted sets carry mass only above L, so their shifts have
        // zero mass at every length <= L and the ratio is unbounded.
        let ce = counterexample(Assumption::Realizability, 4).unwrap();
        assert!(coverage_eta(&ce.ensemble, 4, 2).unwrap().is_finite());
        let c = coverage_eta(&ce.ensemble, 5, 2).unwrap();
        assert!(c.eta.is_infinite());
        let w = c.witness.unwrap();
        assert_eq!(w.subset.diameter(), 2);
        assert!(w.shorter <= 4);
    }

    #[test]
    fn every_atom_is_point_mass_background() {
        for which in Assumption::ALL {
            let ce = counterexample(which, 4).unwrap();
            for len in 2..=8 {
                for a in enumerate_support(&ce.ensemble, len, 1000).unwrap() {
                    assert_eq!(a.x.iter().filter(|&&t| t == 2).count(), 2);
                    assert_eq!(a.y, LabelVec::scalar(1.0));
                }
            }
        }
    }

    #[test]
    fn adversarial_extension_examples() {
        let ce = counterexample(Assumption::Locality, 4).unwrap();
        let hhat = ce.family.member(ce.designated);
        let hstar = ce.family.member(ce.realizer.unwrap());
        let space = LabelSpace::unit_interval();
        let same = adversarial_extension(&hhat, &hhat, 8, &[1, 2], &space, 1 << 10).unwrap();
        assert_eq!(same.gap, 0.0);
        let ext = adversarial_extension(&hstar, &hhat, 8, &[1, 2], &space, 1 << 10).unwrap();
        assert!(ext.gap >= 0.1);
        let direct = space.loss(&hstar.evaluate(&ext.x).unwrap(), &hhat.evaluate(&ext.x).unwrap()).unwrap();
        assert_eq!(direct, ext.gap);
        assert_eq!(ext.label, hstar.evaluate(&ext.x).unwrap());
        assert!(matches!(
            adversarial_extension(&hstar, &hhat, 8, &[1, 2], &space, 100),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
