use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid subset {indices:?}: {reason}")]
    InvalidSubset { indices: Vec<i64>, reason: &'static str },
    #[error("shift by {delta} moves index {index} below 1")]
    ShiftUnderflow { index: usize, delta: i64 },
    #[error("sequence of length {len} is shorter than sparsity {k}")]
    TooShort { len: usize, k: usize },
    #[error("position law undefined at length {len}")]
    UndefinedLength { len: usize },
    #[error("probability table `{what}` sums to {sum}, expected 1")]
    NotNormalized { what: String, sum: f64 },
    #[error("invalid probability {value} in `{what}`")]
    BadProbability { what: String, value: f64 },
    #[error("enumeration needs {needed} atoms, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("token {0} is not in the vocabulary")]
    UnknownToken(String),
    #[error("label {label:?} lies outside the label set")]
    LabelOutOfRange { label: Vec<f64> },
    #[error("no table entry for {0}")]
    MissingEntry(String),
    #[error("score function `{0}` depends on positions")]
    PositionDependent(String),
    #[error("coupled law marginal at length {len} differs from the position law by {gap}")]
    MarginalMismatch { len: usize, gap: f64 },
    #[error("invalid coupling map: {0}")]
    InvalidCoupling(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
