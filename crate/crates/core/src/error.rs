use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too coarse: n = {0}, need at least 4 intervals")]
    GridTooCoarse(usize),

    #[error("alpha must be non-negative and finite, got {0}")]
    NegativeAlpha(f64),

    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("walls must satisfy K1 < 0 < K2, violated at node {node} (K1 = {lower}, K2 = {upper})")]
    InvalidWalls { node: usize, lower: f64, upper: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("inadmissible initial condition: {0}")]
    InadmissibleInitial(String),

    #[error("non-finite state at step {0}")]
    NonFinite(usize),

    #[error("hypothesis H required: {0}")]
    HypothesisRequired(String),

    #[error("time step too large: {0}")]
    StepTooLarge(String),

    #[error("path leaves the walls at time index {step}, node {node}")]
    OutsideWalls { step: usize, node: usize },

    #[error("diffusion coefficient {value} below its lower bound {bound} at time index {step}, node {node}")]
    DegenerateDiffusion {
        step: usize,
        node: usize,
        value: f64,
        bound: f64,
    },

    #[error("empty catalog")]
    EmptyCatalog,

    #[error("empty measure")]
    EmptyMeasure,

    #[error("burn-in {burn_in} shorter than 5 relaxation times ({minimum})")]
    BurnInTooShort { burn_in: f64, minimum: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
