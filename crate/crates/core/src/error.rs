use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported basis: n={n}, p={p}")]
    UnsupportedBasis { n: usize, p: usize },

    #[error("moment degree {degree} exceeds the cap {cap} for this model")]
    DegreeTooHigh { degree: usize, cap: usize },

    #[error("moment backends disagree for exponents {exps:?}: {a} vs {b}")]
    MomentMismatch { exps: [u8; 3], a: f64, b: f64 },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("product of splits {product} exceeds {active} active paths")]
    TooManySplits { product: usize, active: usize },

    #[error("exercise date {0} is not a monitoring date")]
    ExerciseDateMissing(f64),

    #[error("greeks unavailable: {0}")]
    GreeksUnavailable(&'static str),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("price {price} outside no-arbitrage bounds ({lower}, {upper})")]
    PriceOutOfBounds { price: f64, lower: f64, upper: f64 },

    #[error("missing pass-1 artifacts for date {0}")]
    MissingArtifacts(usize),

    #[error("report grids differ")]
    GridMismatch,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
