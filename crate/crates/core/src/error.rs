use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("filter solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("constraint Jacobian is numerically singular (sigma_min/sigma_max = {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("no eigenvalue within tolerance of {target} (closest {closest})")]
    EigenvalueMissing { target: f64, closest: f64 },

    #[error("eigenvalue {target} has multiplicity {multiplicity}")]
    DegenerateEigenspace { target: f64, multiplicity: usize },

    #[error("x = {0} is not a dyadic rational at the configured maximum level")]
    NotDyadic(f64),

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: i64, max: i64 },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("connection matrix for {0} is not in the store")]
    MissingConn(String),

    #[error("cache entry corrupt: {0}")]
    CacheCorrupt(String),

    #[error("cache version mismatch: {0}")]
    VersionMismatch(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("syntax error at position {position}: expected {}", expected.join(" or "))]
    SyntaxError { position: usize, expected: Vec<String> },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("unbound variable '{0}'")]
    UnboundVariable(String),

    #[error("expression is not differentiable: {0}")]
    NotDifferentiable(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("boundary data disagree at corner {0}")]
    CornerMismatch(String),

    #[error("matrix is singular: {0}")]
    SingularMatrix(String),

    #[error("nonlinear iterate violates domain: {0}")]
    DomainViolation(String),

    #[error("Newton did not converge within {max_iter} iterations (|F| = {residual:.3e})")]
    NewtonNoConvergence { max_iter: usize, residual: f64 },

    #[error("Newton damping fell below the floor at |F| = {residual:.3e}")]
    DampingFloor { residual: f64 },

    #[error("unknown example '{0}'")]
    UnknownExample(String),

    #[error("problem file: {0}")]
    ProblemFile(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
