//! Experiment harness for the correction engine. Everything the binary can
//! do is callable as a library function, so the integration tests drive the
//! same code paths as the command line. The contract of each experiment is
//! its CSV file: fixed, schema-tagged columns, byte-identical across reruns
//! with the same seed.

pub mod demos;
pub mod experiments;
pub mod families;

pub use experiments::{
    decay_csv, run_decay, run_synthetic, run_tracking, synthetic_csv, tracking_csv, DecayRow,
    ExperimentSpec, SyntheticRow, TrackingRow, TrackingSpec,
};
pub use families::Family;

/// Harness-level failures: either a library error, or an internal
/// consistency check (`--verify`, the built-in decay soundness assertion)
/// that did not hold.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] lrsqrt::Error),
    #[error("verification failed: {0}")]
    Verify(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
