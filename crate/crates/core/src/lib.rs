//! Pipeline engine for cold-start query suggestion: quality-aware reward
//! computation, grouped training-data export, uncertainty-based hard-sample
//! mining, multi-round orchestration with resumable manifests, and the
//! offline/online evaluation metrics that go with them.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`model`]: domain types, dataset partitions, canonical serialization.
//! - [`prompt`]: prompt templates and robust parsing of model output.
//! - [`gateway`]: chat-completion clients (HTTP and deterministic mock).
//! - [`reward`]: format/quality rewards and group-relative advantages.
//! - [`sampler`]: uncertainty scores and hard-subset selection.
//! - [`pipeline`]: dataset builds, RL rounds, iteration, prediction.
//! - [`eval`]: offline metrics (strict accuracy, valid rate, breakdowns).
//! - [`engagement`]: online interaction-log metrics (UV/PV/growth gap).

pub mod engagement;
pub mod eval;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod reward;
pub mod sampler;
pub mod synth;
