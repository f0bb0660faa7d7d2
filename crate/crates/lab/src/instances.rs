//! Built-in instances for the verification runs.

use lgsparse::coupling::{far_pair_components, CoupledLaw, Coupling, CouplingMap};
use lgsparse::domain::diameter;
use lgsparse::ensembles::{make_shifted_ensemble, Components, PlantedEnsemble, PosLaw, QPos};
use lgsparse::hypotheses::{HypothesisFamily, ScoreFn, ValueFn};
use lgsparse::{LabelSpace, LabelVec, Result, Subset, Token};

pub use lgsparse::coupling::{far_pair, FarPair, FarPairCoupling};

pub const THEOREM_WINDOW: usize = 2;
pub const THEOREM_TRAIN_LEN: usize = 8;
pub const THEOREM_TEST_LENS: [usize; 3] = [10, 12, 16];
/// Label of the marker pair (3, 1) in the perturbed instance.
pub const PERTURBED_FLIP: f64 = 0.02;
/// Realizability level of the perturbed instance: the realizer errs by
/// `PERTURBED_FLIP` on half the mass.
pub const PERTURBED_DELTA: f64 = 0.01;

const MARKER: Token = 3;

/// Marker 3 followed by a payload bit at a uniformly shifted adjacent pair;
/// background uniform on {1, 2}; label = payload − 1, except that the
/// payload 1 is labelled `flip`.
pub fn theorem_ensemble(flip: f64) -> Result<PlantedEnsemble> {
    let parts = Components {
        k: 2,
        space: LabelSpace::unit_interval(),
        vocab: vec![1, 2, MARKER],
        mu: vec![0.5, 0.5, 0.0],
        qvoc: vec![(vec![MARKER, 1], 0.5), (vec![MARKER, 2], 0.5)],
        gstar: ValueFn::rule("payload", move |z: &[Token]| LabelVec::scalar(if z[1] == 2 { 1.0 } else { flip })),
    };
    make_shifted_ensemble(PosLaw::point(Subset::new(vec![1, 2])?), THEOREM_WINDOW, parts)
}

/// Three local, relative scores times three values. Member 1
/// (`marker_adjacent`, `second`) realizes the unperturbed instance.
pub fn theorem_family() -> Result<HypothesisFamily<Token>> {
    let neg = f64::NEG_INFINITY;
    let w = THEOREM_WINDOW;
    let marker_gap =
        |gap: usize| move |s: &[usize], x: &[Token]| if x[0] == MARKER && diameter(s) == gap { 0.0 } else { neg };
    let scores = vec![
        ScoreFn::rule("marker_adjacent", marker_gap(1)).declare_local(w).declare_relative(),
        ScoreFn::rule("marker_gap2", marker_gap(2)).declare_local(w).declare_relative(),
        ScoreFn::rule("local_uniform", move |s: &[usize], _: &[Token]| if diameter(s) <= w { 0.0 } else { neg })
            .declare_local(w)
            .declare_relative(),
    ];
    let bit = |i: usize| move |x: &[Token]| LabelVec::scalar(if x[i] == 2 { 1.0 } else { 0.0 });
    let values = vec![
        ValueFn::constant("half", LabelVec::scalar(0.5)),
        ValueFn::rule("second", bit(1)),
        ValueFn::rule("first", bit(0)),
    ];
    HypothesisFamily::new(2, scores, values)
}

/// The far-pair tokens planted on an adjacent pair {a, a+1} under the
/// identity coupling. Identity is amenable here and no member ever reaches
/// its fallback, so PC must reproduce the raw results exactly.
pub fn adjacent_identity() -> Result<FarPair> {
    let pairs = |len: usize| (1..len).map(move |a| Subset::new(vec![a, a + 1]));
    let qpos = QPos::generated("adjacent_pair", move |len| {
        (len >= 2).then(|| PosLaw::uniform(pairs(len).map(|s| s.expect("a < a + 1"))))
    });
    let ensemble = PlantedEnsemble::new(far_pair_components(), qpos)?;
    let coupling = Coupling::generated("adjacent_identity", move |len| {
        let p = 1.0 / len.checked_sub(1).filter(|&n| n > 0)? as f64;
        let atoms =
            pairs(len).map(|s| s.map(|s| (s, CouplingMap::identity(len), p))).collect::<Result<Vec<_>>>().ok()?;
        Some(CoupledLaw::new(atoms))
    });
    let fp = far_pair(FarPairCoupling::Identity)?;
    Ok(FarPair { ensemble, coupling, ..fp })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TheoremInstance {
    Exact,
    Perturbed,
}

impl TheoremInstance {
    pub fn name(self) -> &'static str {
        match self {
            TheoremInstance::Exact => "delta0",
            TheoremInstance::Perturbed => "perturbed",
        }
    }

    pub fn delta(self) -> f64 {
        match self {
            TheoremInstance::Exact => 0.0,
            TheoremInstance::Perturbed => PERTURBED_DELTA,
        }
    }

    pub fn ensemble(self) -> Result<PlantedEnsemble> {
        theorem_ensemble(match self {
            TheoremInstance::Exact => 0.0,
            TheoremInstance::Perturbed => PERTURBED_FLIP,
        })
    }
}
