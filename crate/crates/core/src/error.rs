use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The affine Bloch generator has no unique fixed point.
    #[error("steady state is degenerate (no unique fixed point)")]
    DegenerateSteadyState,

    #[error("model denominator vanishes at omega = {omega}")]
    PoleGuard { omega: f64 },

    #[error("response poles coincide; partial-fraction expansion is ill-conditioned")]
    DegeneratePoles,

    #[error("outcome probability {p} outside [0, 1]")]
    ProbabilityOutOfRange { p: f64 },

    #[error("no spectral peak above noise floor (max {max:.3e} <= threshold {threshold:.3e})")]
    NoPeak { max: f64, threshold: f64 },

    #[error("auxiliary decay tail not settled (drift {drift:.3e} > tolerance {tolerance:.3e})")]
    TailNotSettled { drift: f64, tolerance: f64 },

    #[error("auxiliary branches show no resolvable decay")]
    DegenerateDecay,

    #[error("covariance undefined with {residuals} residuals and {params} free parameters")]
    UndefinedCovariance { residuals: usize, params: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that reflect the data or the model rather than the
    /// caller's inputs or the filesystem.
    pub fn is_statistical(&self) -> bool {
        matches!(
            self,
            Error::NoPeak { .. }
                | Error::TailNotSettled { .. }
                | Error::DegenerateDecay
                | Error::UndefinedCovariance { .. }
                | Error::DegenerateSteadyState
        )
    }
}

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
