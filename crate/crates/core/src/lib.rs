//! End-to-end toolkit for predicting the remaining flight time of an
//! electric aircraft from battery telemetry: CSV ingestion and cleaning,
//! cumulative area-under-curve feature engineering, principal component
//! reduction, a random-forest regressor and small feed-forward networks,
//! and a per-experiment holdout harness that compares them.
//!
//! Everything stochastic is driven by explicit seeds; identical inputs and
//! seeds give bit-identical artifacts, including under parallel training.

pub mod decomposition;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod mlp;
pub mod numeric;
pub mod persist;
pub mod synthgen;
pub mod telemetry;
