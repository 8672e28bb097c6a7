//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad grid parameters, malformed config file,
    /// inconsistent run options).
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative transport solve did not reach the requested residual.
    #[error(
        "transport solve did not converge: residual {achieved:.3e} after {iterations} sweeps \
         (target {target:.3e})"
    )]
    SolverNonConvergence {
        achieved: f64,
        target: f64,
        iterations: usize,
    },

    /// A forward solve inside dataset generation failed; `index` is the
    /// experiment that was being generated.
    #[error("forward solve failed for experiment {index}: {source}")]
    DatasetSolve {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Dimension or boundary-set mismatch between two objects.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// Iterate norm exploded past the divergence guard.
    #[error("iteration diverged: |sigma_{n}| = {norm:.3e} exceeds guard {guard:.3e}")]
    Diverged { n: usize, norm: f64, guard: f64 },

    /// Learning rate outside the admissible range for the linearized system.
    #[error(
        "learning rate {eta:.6e} outside admissible range (0, {bound:.6e}) = (0, 2/(C_A + alpha))"
    )]
    StepSizeOutOfRange { eta: f64, bound: f64 },

    /// Singular linear system (e.g. exact minimizer with alpha = 0 and a
    /// rank-deficient normal matrix).
    #[error("singular system: {0}")]
    Singular(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk artifact (manifest, record, field dump).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// An optimization run stopped early on a solver failure; partial
    /// artifacts were written.
    #[error("run aborted: {0}")]
    Aborted(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format { .. } | Error::Mismatch(_) => 2,
            Error::SolverNonConvergence { .. }
            | Error::DatasetSolve { .. }
            | Error::Singular(_)
            | Error::Aborted(_) => 3,
            Error::Diverged { .. } => 4,
            Error::StepSizeOutOfRange { .. } => 2,
            Error::Io(_) => 3,
        }
    }
}
