//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, factorization and container IO.
#[derive(Debug, Error)]
pub enum Error {
    /// Model matrices have inconsistent dimensions or non-finite entries.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Two objects that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A reference sequence required to be nonzero is identically zero.
    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    /// The resolvent (e^{i omega} I - A) is singular at the given frequency.
    #[error("singular resolvent at omega = {omega}")]
    SingularResolvent {
        /// Frequency in radians per sample at which the solve failed.
        omega: f64,
    },

    /// Orthogonalization could not complete because the input is (numerically)
    /// rank deficient or zero.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// The leave-one-out estimator cannot be evaluated (singular triangular
    /// factor or empty sketch).
    #[error("leave-one-out estimator unavailable: {0}")]
    EstimatorUnavailable(String),

    /// The sketch grew to the full operator size without meeting the
    /// requested tolerance.
    #[error(
        "tolerance {etol:.3e} unreachable: sketch width {width} exhausted the operator, \
         last estimate {last_estimate:.3e}"
    )]
    ToleranceUnreachable {
        /// Requested absolute tolerance.
        etol: f64,
        /// Last leave-one-out estimate before giving up.
        last_estimate: f64,
        /// Sketch width at which the search stopped.
        width: usize,
    },

    /// The shift least-squares problem of the realization step is rank
    /// deficient.
    #[error("ill-posed shift problem: {0}")]
    IllPosedShift(String),

    /// A dead-time specification is inconsistent with the data it is applied
    /// to (for example a shift exceeding the record length).
    #[error("invalid dead-time spec: {0}")]
    InvalidSpec(String),

    /// The dead-time linear program failed to solve.
    #[error("linear program failure: {0}")]
    LinearProgram(String),

    /// A container violates its declared format (wrong version, byte count or
    /// non-finite payload).
    #[error("container format error: {0}")]
    Format(String),

    /// Underlying filesystem error.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
