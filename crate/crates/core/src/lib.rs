//! Desk-scale federated averaging with user-level differential privacy.
//!
//! The crate simulates the full protocol: agents run regularized local
//! updates on private shards, sparsify and clip what they upload, add their
//! share of Gaussian noise, and the server averages the result while a
//! Renyi accountant tracks the privacy spend. Two techniques keep the
//! uploads informative under a tight clipping threshold:
//!
//! - bounded local update regularization ([`blur`]): penalizes local
//!   iterates that drift outside the clipping ball, shrinking update norms
//!   at the source;
//! - local update sparsification ([`lus`]): zeroes the update coordinates
//!   whose removal costs the local loss the least, shrinking norms further
//!   without touching what matters.
//!
//! Everything is `f64`, deterministic per seed, and `no_std` (with `alloc`):
//! IO, configs, and the command-line runner live in the companion CLI crate.

#![no_std]
// Validation uses negated comparisons (`!(x > 0.0)`) so NaN inputs fail
// closed; the lint's suggested rewrite would let NaN pass.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod accountant;
pub mod blur;
pub mod data;
pub mod dp;
pub mod error;
pub mod federation;
pub mod lus;
pub mod nn;
pub mod params;
pub mod rng;

pub use accountant::{calibrate_sigma, epsilon_for, CalibrationResult, PrivacyLedger};
pub use blur::BlurConfig;
pub use data::{
    generate_synthetic, partition, AgentShard, Dataset, PartitionScheme, PartitionSpec,
};
pub use dp::DpConfig;
pub use error::{Error, Result};
pub use federation::{run_experiment, ExperimentOutput, RoundMetrics, TrainConfig};
pub use lus::SparsityConfig;
pub use nn::{Activation, LossKind, MlpModel, ModelSpec, Sample, Target};
pub use params::ParamVector;
