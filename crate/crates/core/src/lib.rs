//! Dual-branch spatial-spectral-temporal transformer for EEG decoding.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod train;

pub use config::{ablation_flags, Ablation, RunConfig};
pub use dataio::TrialSet;
pub use error::{Error, Result};
pub use model::{DualTsst, ModelConfig};
pub use tensor::{Graph, Tensor, Var};
pub use train::{train_loop, TrainConfig};
