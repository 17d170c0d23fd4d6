use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row} after maximum jitter)")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite gradient component at index {0}")]
    NonFiniteGradient(usize),

    #[error("non-finite training loss after {} epochs", history.len())]
    NonFiniteLoss { history: Vec<f64> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero variance in dimension {0}, cannot standardize")]
    DegenerateScale(usize),

    #[error("Monte Carlo prediction needs at least 2 passes, got {0}")]
    InvalidPassCount(usize),

    #[error("posterior prediction needs at least 2 draws, got {0}")]
    TooFewDraws(usize),

    #[error("predictive grids do not share the same inputs")]
    GridMismatch,

    #[error("region mismatch: {0}")]
    RegionMismatch(String),

    #[error("every one of the {0} post-warmup draws diverged")]
    AllDivergent(usize),

    #[error("ensemble needs at least 2 members, got {0}")]
    InsufficientMembers(usize),

    #[error("hyperparameter fit failed after {} steps: {source}", trajectory.len())]
    FitFailed {
        trajectory: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the request.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonFiniteGradient(_)
                | Error::NonFiniteLoss { .. }
                | Error::NonFinite(_)
                | Error::AllDivergent(_)
                | Error::FitFailed { .. }
        )
    }
}
