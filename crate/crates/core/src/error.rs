use std::fmt;

/// Errors produced by field construction, convolution, fitting and simulation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported product rule {rule} in {dim}d; supported rules: {allowed}")]
    UnsupportedRule {
        rule: RuleTriple,
        dim: usize,
        allowed: String,
    },

    #[error("rotation order mismatch: expected l={expected}, got l={found}")]
    OrderMismatch { expected: u8, found: u8 },

    #[error("unsupported rotation order l={l} in {dim}d")]
    UnsupportedOrder { l: u8, dim: usize },

    #[error("rotation incompatible with grid: {0}")]
    IncompatibleRotation(String),

    #[error("profile `{0}` is singular at the origin and has no origin value rule")]
    MissingOriginRule(String),

    #[error("unknown radial profile `{0}`")]
    UnknownProfile(String),

    #[error("unknown operator `{name}`; registry: {registry}")]
    UnknownOperator { name: String, registry: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed field data: {0}")]
    Format(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty basis: the radial parameterization has no terms")]
    EmptyBasis,

    #[error("channel count mismatch: layer expects {expected}, got {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("singular least-squares system ({0}); condition estimate {1:e}")]
    Singular(String, f64),

    #[error("rank-deficient features: {0}")]
    RankDeficient(String),

    #[error("unstable time step dt={dt:e}; stability bound requires dt <= {max_dt:e}")]
    Unstable { dt: f64, max_dt: f64 },

    #[error("non-finite value encountered at step {0}")]
    NonFinite(usize),

    #[error("gradient descent diverged at step {step} (loss {loss:e})")]
    Diverged { step: usize, loss: f64, trace: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// `(l_u, l_h) -> l_v` triple, used for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleTriple(pub u8, pub u8, pub u8);

impl fmt::Display for RuleTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})->{}", self.0, self.1, self.2)
    }
}
