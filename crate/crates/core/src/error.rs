use thiserror::Error;

/// Errors produced by the estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain mismatch between functions in element {0}")]
    DomainMismatch(usize),

    #[error("invalid weight {value} for element {element}; weights must be positive and finite")]
    InvalidWeight { element: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mean undefined at grid point {point} of element {element}: no observation covers it")]
    UnobservedPoint { element: usize, point: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("point {value} lies outside the basis support [{lower}, {upper}]")]
    OutsideSupport { value: f64, lower: f64, upper: f64 },

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("matrix is not positive definite even after jitter: {0}")]
    NotPositiveDefinite(String),

    #[error("insufficient design for covariance smoothing: {0}")]
    InsufficientDesign(String),

    #[error("zero variance in element {0}; weight would be infinite")]
    ZeroVariance(usize),

    #[error("memory guard: {0}")]
    TooLarge(String),

    #[error("bootstrap failed: {failed} of {total} replicates could not be fitted")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed dataset: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
