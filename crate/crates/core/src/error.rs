use thiserror::Error;

/// Errors returned by the library. Report-valued checks never fail; everything
/// else that can reject its input goes through here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degree {degree} out of range for a box of dimension {dim}")]
    DegreeOutOfRange { degree: usize, dim: usize },
    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("modulus mismatch: expected Z_{expected}, got Z_{got}")]
    ModulusMismatch { expected: u32, got: u32 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("not a path: {0}")]
    NotAPath(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("enumeration budget exceeded: {needed} configurations requested, budget is {budget}")]
    Budget { needed: f64, budget: u64 },
    #[error("outside the convergent regime: {0}")]
    OutsideRegime(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
