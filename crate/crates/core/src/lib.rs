//! Utility-preserving coreset selection for machine unlearning.
//!
//! The pipeline scores every point of a forget set with an Isolation Forest
//! fitted on hidden-state vectors, drops the most anomalous points, runs an
//! unlearning objective on what is left, and measures the forgetting versus
//! utility trade-off as an area under the checkpoint curve.
//!
//! Modules map one-to-one onto pipeline stages:
//!
//! - [`datastore`]: JSONL records, validation, role partitioning.
//! - [`isoforest`]: Isolation Forest and anomaly scores.
//! - [`coreset`]: hidden-state variance and the selection rules.
//! - [`sandbox`]: a small hand-differentiated fact model and the unlearning objectives.
//! - [`metrics`]: ROUGE-L, likelihood metrics, Pearson, trade-off AUC.
//! - [`synth`]: synthetic topic corpora for the sandbox.
//! - [`pipeline`]: end-to-end runs, sweeps and correlation reports.

pub mod coreset;
pub mod datastore;
mod error;
pub mod isoforest;
pub mod metrics;
pub mod pipeline;
pub mod sandbox;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
