//! Truncated variational EM for generative models with discrete or
//! spike-and-slab latents.
//!
//! The crate provides the truncation engine, deterministic annealing,
//! a sharded data-parallel E-step and eight model families. See
//! [`em::EmRunner`] for the training loop.

pub mod annealing;
pub mod data;
pub mod em;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod models;
pub mod numeric;
pub mod parallel;
pub mod rng;
pub mod truncation;

pub use annealing::{linear_annealing, AnnealState, Annealing, LinearAnnealing, Schedule};
pub use data::{DataKind, DataSet};
pub use em::{EmRunner, RunLogger, TrainResult};
pub use error::{Error, ErrorClass, Result};
pub use linalg::DenseMatrix;
pub use model::{Model, PointInference, Sample};
pub use parallel::{Executor, ShardPlan};
pub use rng::RngStream;
pub use truncation::TruncationConfig;
