//! Filesystem, configuration, and process-level companion to `qaspr-core`:
//! TSV dataset loading, run configuration with presets, binary checkpoints,
//! JSON reports, a rayon-backed query runner, and a synthetic dataset
//! generator used by the test suite and for quick local experiments.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::RunConfig;
pub use parallel::Runner;
