//! Verification runs, dataset generation and report emission on top of
//! `lgsparse`.

pub mod cli;
pub mod instances;
pub mod lemmas;
pub mod report;
pub mod runs;
