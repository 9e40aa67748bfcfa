//! Audience expansion via a meta-trained hybrid experts/critics model.
//!
//! The crate provides the full two-stage pipeline: offline meta-training
//! of a general look-alike model across many campaign tasks, and the
//! online stage that fine-tunes a per-campaign model and ranks a
//! candidate pool to select the expanded audience.
//!
//! Layers, bottom up:
//!
//! - [`tensor`] / [`tape`] / [`params`]: dense f64 math and a reverse-mode
//!   differentiation tape whose backward pass is itself differentiable
//!   (needed for the second-order meta-update).
//! - [`features`]: sparse categorical feature schemas and embedding lookup.
//! - [`model`]: the hybrid experts/critics network with task-driven gates.
//! - [`train`]: offline meta-training (and the plain-BP ablation).
//! - [`adapt`]: online fine-tuning, candidate scoring and top-K expansion.
//! - [`metrics`]: AUC, precision/recall at top K percent, task grouping
//!   and multi-run aggregation.
//! - [`data`]: task-file I/O, negative sampling and a synthetic
//!   multi-campaign generator for desk-scale verification.
//!
//! Data-parallel sections (candidate scoring, per-task meta-gradients,
//! per-task evaluation) run on rayon when the default `parallel` feature
//! is enabled and fall back to sequential loops without it; results are
//! identical either way.

pub mod adapt;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub(crate) mod par;
pub mod rng;

pub use error::{Error, Result};
