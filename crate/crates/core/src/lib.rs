//! A desk-scale laboratory for implicit identification of environment
//! dynamics: learn context-conditioned one-step predictors over families of
//! environments with hidden physical parameters, act through cross-entropy
//! -method action search, and analyze the learned latent space.
//!
//! Layout:
//! - [`numcore`] — dense f64 tensors, define-by-run reverse-mode autodiff,
//!   Adam, parameter checkpoints.
//! - [`nets`] — MLP, LSTM and single-layer multi-head attention blocks.
//! - [`envsim`] — parameterized analytic physics (Slide Puck, Push Box, a
//!   multi-step surrogate) plus one-step relabeling.
//! - [`datastore`] — ribbon splits, dataset generation, context sampling,
//!   JSONL serialization.
//! - [`model`] — context encoders + predictor, training, evaluation.
//! - [`control`] — CEM action search and goal-reaching evaluation.
//! - [`analysis`] — context-size sweeps, latent self-consistency, PCA export.

pub mod analysis;
pub mod control;
pub mod datastore;
pub mod envsim;
pub mod error;
pub mod model;
pub mod nets;
pub mod numcore;
pub mod rng;

pub use error::CoreError;
