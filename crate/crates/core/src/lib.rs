//! Joint emotion classification and emotion-cause span tagging.
//!
//! The crate is organised bottom-up: [`tensor`] provides the autodiff
//! engine, [`text`] turns headlines into encoder inputs, [`encoder`] and
//! [`heads`] make up the models, and [`train`] drives optimisation and the
//! multi-seed protocol. [`knowledge`], [`dataset`] and [`metrics`] cover
//! input augmentation, corpus handling and evaluation.

pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod heads;
pub mod knowledge;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};

/// Seeded generator used for every stochastic step of a run.
pub type RunRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RunRng {
    use rand::SeedableRng;
    RunRng::seed_from_u64(seed)
}
