//! Sparse planted-correlation ensembles, sparse functional attention and
//! exact checks of length generalization, position coupling and the
//! synthetic task generators that exercise them.

pub mod coupling;
pub mod domain;
pub mod ensembles;
pub mod error;
pub mod formats;
pub mod hypotheses;
pub mod risk;
pub mod rng;
pub mod taskgen;

pub use domain::{loss, subsets_k, LabelSpace, LabelVec, Norm, Subset, Token, TokenSeq, Vocab, TOL};
pub use error::{Error, Result};
