use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("design has no strata")]
    EmptyDesign,

    #[error("stratum {stratum}: {reason}")]
    InvalidStratum { stratum: String, reason: String },

    #[error("design is infeasible: {0}")]
    Infeasible(String),

    #[error("allocation has {got} entries, design has {expected} strata")]
    AllocationLength { expected: usize, got: usize },

    #[error("allocation for stratum {stratum} is {value}, outside [{lower}, {upper}]")]
    AllocationOutOfBounds {
        stratum: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("stratum {stratum} has no fourth-moment matrix and no proxy was requested")]
    MissingFourthMoments { stratum: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("variance of the variance estimator is not positive for characteristic {characteristic} at n = {allocation:?}")]
    DegenerateVariance {
        characteristic: usize,
        allocation: Vec<f64>,
    },

    #[error("negative radicand {value} in dispersion term at n = {allocation:?}")]
    NegativeRadicand { value: f64, allocation: Vec<f64> },

    #[error("probability {0} is outside (0, 1)")]
    Probability(f64),

    #[error("matrix is not symmetric: {0}")]
    Asymmetric(String),

    #[error("correlation matrix is not positive semidefinite (smallest eigenvalue {0})")]
    NotPositiveSemidefinite(f64),

    #[error("integer lattice has {points} points, exceeds the enumeration limit {limit}")]
    LatticeTooLarge { points: u128, limit: u128 },

    #[error("invalid population: {0}")]
    Population(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
