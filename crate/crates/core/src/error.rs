use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("fields live on different grids")]
    DomainMismatch,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("non-finite {what} at cell {cell}")]
    NonFinite { what: &'static str, cell: usize },
    #[error("asymmetric tensor at cell {cell}: |d_ij - d_ji| = {gap:e}")]
    Asymmetric { cell: usize, gap: f64 },
    #[error("degeneracy set violates the boundary margin: {0}")]
    MarginViolated(String),
    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StabilityViolated { dt: f64, bound: f64 },
    #[error("blow-up at t = {t}: sup norm {max:e} exceeds {limit:e}")]
    BlowUp { t: f64, max: f64, limit: f64 },
    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("mask selects no admissible cell")]
    EmptyMask,
    #[error("region too close to the degeneracy set: {0}")]
    RegionTooClose(String),
    #[error("trajectories are not comparable: {0}")]
    TrajectoryMismatch(String),
    #[error("test function support {support} exceeds trajectory horizon {horizon}")]
    SupportBeyondHorizon { support: f64, horizon: f64 },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
