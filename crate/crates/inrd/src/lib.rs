//! Training and dissection toolkit for coordinate-network image
//! representations.
//!
//! The crate covers the full pipeline: fitting sinusoidal (SIREN) and
//! Fourier-feature ReLU networks to images, training a shared encoder over an
//! image cohort, locating which encoder depth generalizes (freeze sweeps and
//! weight stable rank), and dissecting encoder activations with top-k sparse
//! autoencoders, per-atom spatial maps, and single-atom ablations.
//!
//! Every run is seed-deterministic: identical seeds and inputs produce
//! bitwise-identical checkpoints and metrics on the same build.

pub mod cohort;
pub mod error;
pub mod fit;
pub mod inr;
pub mod metrics;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod rank;
pub mod sae;
pub mod tensor;
pub mod transfer;
pub mod workbench;

pub use error::{Error, Result};
