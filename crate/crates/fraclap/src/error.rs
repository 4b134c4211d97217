use thiserror::Error;

#[derive(Debug, Error)]
pub enum FracError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pole proximity: {0}")]
    PoleProximity(String),
    #[error("non-smooth point: gradient requested on a kink hyperplane at x1 = {0}")]
    NonSmoothPoint(f64),
    #[error("principal value did not stabilize: {0}")]
    PrincipalValueDiverged(String),
    #[error("quadrature budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("zero denominator in Rayleigh quotient")]
    ZeroDenominator,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FracError>;
