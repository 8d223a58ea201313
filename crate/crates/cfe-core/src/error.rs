//! Error type shared by all solver modules.

use thiserror::Error;

/// Errors produced by grid construction, scheme assembly, time integration
/// and the verification checkers.
#[derive(Debug, Error)]
pub enum CfeError {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A kernel evaluation returned a non-finite or negative rate.
    #[error("kernel evaluation error at (y={y}, z={z}): {detail}")]
    KernelEval { y: f64, z: f64, detail: String },

    /// Geometric grid construction could not find a feasible width ratio.
    #[error("infeasible grid: {0}")]
    InfeasibleGrid(String),

    /// A volume fell outside the truncated domain (0, R].
    #[error("volume {v} outside domain (0, {r}]")]
    OutOfDomain { v: f64, r: f64 },

    /// A proven inequality or property failed numerically.
    #[error("property violation in {check}: {detail} (witness: {witness})")]
    PropertyViolation {
        check: String,
        witness: String,
        detail: String,
    },

    /// Step-size control hit dt_min while the solution kept going negative.
    #[error(
        "stiffness at t={t}: step rejected down to dt_min={dt_min}; \
         use a smaller dt or positivity mode 'clip'"
    )]
    Stiffness { t: f64, dt_min: f64 },

    /// The tail profile never decays enough to build a weight on this domain.
    #[error("truncation too small: tail profile stays above 2^-{k} up to {domain_max}")]
    TruncationTooSmall { k: u32, domain_max: f64 },

    /// An oracle was queried past its validity window.
    #[error("post-gelation query: t={t} >= gelation time {t_gel}")]
    PostGelation { t: f64, t_gel: f64 },
}

pub type Result<T> = std::result::Result<T, CfeError>;

impl CfeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CfeError::InvalidArgument(msg.into())
    }
}
