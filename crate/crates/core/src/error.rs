use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has no atoms")]
    EmptyMeasure,
    #[error("invalid mass {0}: masses must be positive and finite")]
    InvalidMass(f64),
    #[error("kernel scale {0} outside (0, 1/2)")]
    InvalidScale(f64),
    #[error("blocks overlap: {0}")]
    OverlappingBlocks(String),
    #[error("spectrum is not centered (zeroth coefficient {0})")]
    NotCentered(f64),
    #[error("truncation orders differ: {0} vs {1}")]
    TruncationMismatch(usize, usize),
    #[error("reference norm is infinite")]
    InfiniteNorm,
    #[error("total masses differ: {0} vs {1}")]
    UnbalancedMeasures(f64, f64),
    #[error("coupling is not monotone: {0}")]
    NotMonotone(String),
    #[error("time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("boundary norm diverges for atomic tips at s = {0}")]
    DivergentBoundaryNorm(f64),
    #[error("node {0} not found")]
    NodeNotFound(usize),
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("delta {0} outside (1/4, 1/2)")]
    InvalidDelta(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("optimizer has no seed constructions")]
    NoSeeds,
    #[error("exponent outside its validity window: {0}")]
    OutOfValidity(String),
    #[error("input pattern is not converged: {0}")]
    StaleInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
