use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("incompatible inputs: {0}")]
    IncompatibleInputs(String),

    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("invalid interval: s = {s} > t = {t}")]
    InvalidInterval { s: f64, t: f64 },

    #[error("invalid inverter: {0}")]
    InvalidInverter(String),

    #[error("no feasible schedule found: best residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    NoFeasibleSchedule { residual: f64, tolerance: f64 },

    #[error("conditioning failure: propagator step deviates from unitarity by {0:.3e}; use more substeps")]
    ConditioningFailure(f64),

    #[error("hypotheses not verified: {0}")]
    HypothesesNotVerified(String),

    #[error("quadrature did not converge: relative change {0:.3e} under refinement")]
    QuadratureNonConvergence(f64),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidSpec { field: field.into(), reason: reason.into() }
    }
}
