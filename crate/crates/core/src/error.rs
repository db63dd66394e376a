use thiserror::Error;

/// Errors raised by the simulator and its numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unreachable link: transmission rate is zero")]
    UnreachableLink,

    #[error("degenerate link: SINR is zero")]
    DegenerateLink,

    #[error("degenerate instance: every bandwidth radicand is zero")]
    DegenerateInstance,

    #[error("infeasible link: P* = {p_star} W exceeds p_max = {p_max} W")]
    InfeasibleLink { p_star: f64, p_max: f64 },

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("{name} = {value} outside [{min}, {max}]")]
    OutOfRange { name: &'static str, value: f64, min: f64, max: f64 },

    #[error("empty round: no upload was received")]
    EmptyRound,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sampler gave up after {0} attempts")]
    SamplerExhausted(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config file: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}
