//! Object-level visual search scanpath prediction: a transformer
//! encoder/decoder over grid objects with distance-based positional codes,
//! plus data tooling, baselines, and scanpath metrics.

pub mod baselines;
pub mod datasets;
pub mod embedding;
pub mod error;
pub mod fsutil;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oa;
pub mod pe;
pub mod seeding;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
