use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("invalid mesh: {0}")]
    MeshInvalid(String),
    #[error("kernel evaluated at coincident points")]
    Domain,
    #[error("quadrature rule produced coincident points for a {0} pair")]
    RuleConstruction(&'static str),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("singular pivot block in cluster {cluster} (condition estimate {condition:.3e})")]
    SingularPivot { cluster: usize, condition: f64 },
    #[error("operator is not positive definite (p^H A p = {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("iteration stagnated after {iterations} steps (relative residual {residual:.3e})")]
    Stagnation { iterations: usize, residual: f64 },
    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
