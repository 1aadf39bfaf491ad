use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// Every variant maps onto one of the CLI exit classes through
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("theta_d = 0: the companion matrix is singular")]
    DegenerateTheta,

    #[error("bad noise specification: {0}")]
    BadSpec(String),

    #[error("operation requires order {expected}, got {got}")]
    WrongOrder { expected: usize, got: usize },

    #[error("parameter is not in the purely explosive region (lower spectral radius {rho_lower})")]
    NotPurelyExplosive { rho_lower: f64 },

    #[error("parameter is not in the stable region (spectral radius {rho})")]
    NotStable { rho: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("structural check failed: {0}")]
    PatternViolation(String),

    #[error("truncation tolerance unreachable within cap K = {cap} (bound at cap {bound:e})")]
    HorizonOverflow { cap: usize, bound: f64 },

    #[error("series did not converge within {0} terms")]
    NoConvergence(usize),

    #[error("linear system is singular")]
    SingularSystem,

    #[error("path too short: need at least {need} observations, have {have}")]
    PathTooShort { need: usize, have: usize },

    #[error("lag {lag} not available (max lag {max})")]
    LagTooLarge { lag: usize, max: usize },

    #[error("bad h map: {0}")]
    BadH(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("target covariance has rank zero")]
    RankZero,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 invalid input, 3 region violation, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPurelyExplosive { .. } | Error::NotStable { .. } => 3,
            Error::NumericalFailure(_)
            | Error::PatternViolation(_)
            | Error::HorizonOverflow { .. }
            | Error::NoConvergence(_)
            | Error::SingularSystem
            | Error::RankZero => 4,
            Error::InvalidSpec(_)
            | Error::DegenerateTheta
            | Error::BadSpec(_)
            | Error::WrongOrder { .. }
            | Error::PathTooShort { .. }
            | Error::LagTooLarge { .. }
            | Error::BadH(_)
            | Error::DimensionMismatch(_)
            | Error::Config(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
        }
    }
}
