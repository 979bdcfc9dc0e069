//! Experiment harness library: configuration, IDX ingestion, and pipeline
//! orchestration around `snlab-core`.

pub mod config;
pub mod harness;
pub mod idx;
