//! Desk-scale toolkit for studying measurement attacks on a two-area
//! automatic generation control (AGC) system.
//!
//! The crate covers the full loop: a deterministic nonlinear plant model
//! ([`plant`]), false-data injections on one measured signal ([`attack`]),
//! reproducible labeled dataset generation ([`datagen`]), statistical
//! feature extraction ([`features`]), in-repo tree-ensemble detectors
//! ([`detector`]), an LLM explanation client with an offline mock backend
//! ([`explainer`]), and a scoring/reporting harness ([`evaluator`]).
//!
//! Everything is seeded: the same seeds produce bit-identical datasets,
//! models, and reports, independent of worker count.

pub mod attack;
pub mod datagen;
pub mod detector;
pub mod evaluator;
pub mod explainer;
pub mod features;
pub mod plant;
pub mod plot;
pub mod rng;
