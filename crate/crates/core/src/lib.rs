//! Temporal graph transformer for multi-behavior sequential recommendation.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: dense `f64` tensors and a reverse-mode tape.
//! * [`data`]: interaction logs, sequences, leave-one-out splits, sampling
//!   and a synthetic corpus generator.
//! * [`temporal`]: sinusoidal time encoding and context embeddings.
//! * [`attention`]: multi-head self-attention over sub-sequences.
//! * [`graph`]: behavior-aware message passing between items, sub-users and
//!   users, stacked over several layers.
//! * [`model`], [`train`], [`eval`]: parameters, the forward pass, the hinge
//!   objective with Adam, and leave-one-out ranking evaluation.
//! * [`checkpoint`]: binary persistence of parameters and optimizer state.

pub mod ablation;
pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod rng;
pub mod temporal;
pub mod toy;
pub mod train;

pub use ablation::AblationConfig;
pub use autodiff::{Tape, Tensor, Var};
pub use data::{Dataset, InteractionRecord, SyntheticConfig};
pub use error::{Error, Result};
pub use eval::{CandidatePolicy, RankingReport};
pub use model::{EtaMode, ModelConfig, ModelParameters, RefineMode};
pub use train::{OptimizerState, TrainConfig};
