//! Experiment harness for the robust dynamic-programming toolkit.
//!
//! Wraps the core solvers in reproducible, artifact-producing experiments:
//! three worked examples (a noisy positioning plant learned from data, an
//! output-variance minimization for a marginal time series, and a
//! multi-asset wealth-regulation game), a randomized verification suite, and
//! a custom single-plant runner. The `robust-dp` binary is a thin CLI over
//! [`run_experiment`].
//!
//! Reproducibility contract: a run is a pure function of its resolved
//! configuration and seed. Every output directory contains the resolved
//! config, CSV traces are byte-identical across reruns, and all randomness
//! flows through labeled streams in [`seeding`].

pub mod artifact;
pub mod config;
pub mod experiments;
pub mod seeding;
pub mod sysgen;

pub use artifact::{CheckResult, ExperimentReport};
pub use config::{ExperimentConfig, ExperimentId};
pub use experiments::run_experiment;

use robust_dp_core::adp::AdpError;
use robust_dp_core::decentralized::DecentralizedError;
use robust_dp_core::ergodic::ErgodicError;
use robust_dp_core::riccati::RiccatiError;
use robust_dp_core::vi::ViError;

/// Failure modes of the harness itself. Configuration problems are usage
/// errors (CLI exit code 2); everything else aborts the run as a failure
/// (exit code 1).
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("oracle solve failed: {0}")]
    Riccati(#[from] RiccatiError),
    #[error("value iteration failed: {0}")]
    Vi(#[from] ViError),
    #[error("data-driven run failed: {0}")]
    Adp(#[from] AdpError),
    #[error("estimation-driven run failed: {0}")]
    Ergodic(#[from] ErgodicError),
    #[error("coupled solve failed: {0}")]
    Decentralized(#[from] DecentralizedError),
}

impl HarnessError {
    /// True for errors the CLI should report as usage errors (exit 2)
    /// rather than run failures (exit 1).
    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}
