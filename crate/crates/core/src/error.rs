use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
///
/// Variants carry owned strings rather than source errors so that results can
/// be cloned out of memo tables shared between threads.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("malformed model document at line {line}, column {column}: {msg}")]
    Json { line: usize, column: usize, msg: String },

    #[error("unknown symbol `{symbol}` in {context}")]
    UnknownSymbol { symbol: String, context: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("initial state {init:?} lies outside the domain")]
    InitOutOfDomain { init: Vec<i64> },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("transition `{transition}` has negative rate {value} at state {state:?}")]
    NegativeRate {
        transition: String,
        state: Vec<i64>,
        value: f64,
    },

    #[error("evaluation error in `{context}`: {msg}")]
    Evaluation { context: String, msg: String },

    #[error("model is not stoichiometrically reducible (codim = 0)")]
    NotReducible,

    #[error("matrix is singular")]
    Singular,

    #[error("linear image does not map {what} to integers")]
    NonIntegerImage { what: String },

    #[error("columns are linearly dependent")]
    DependentColumns,

    #[error("state space of {size} states exceeds the limit of {limit}")]
    StateSpaceOverflow { size: u128, limit: u128 },

    #[error("truncation excludes the initial state {init:?}")]
    InitNotInTruncation { init: Vec<i64> },

    #[error("variable `{0}` is unbounded and has no truncation cap")]
    MissingCap(String),

    #[error("stationary law is ambiguous: {classes} closed classes reachable from the initial state")]
    AmbiguousStationary { classes: usize },

    #[error("process absorbed at t = {time} in state {state:?}")]
    Absorbed { time: f64, state: Vec<i64> },

    #[error("stationarity estimate failed: {0}")]
    Stationarity(String),

    #[error("rate of transition `{transition}` is not density dependent (W(Nx)/N does not converge)")]
    NotDensityDependent { transition: String },

    #[error("step size underflow at t = {t}; the system looks stiff, consider the quasi-equilibrium reduction")]
    StepSizeUnderflow { t: f64 },

    #[error("integration produced a non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("maximum number of steps ({0}) exceeded")]
    TooManySteps(usize),

    #[error("Newton iteration for the fast root diverged at y = {y:?}")]
    NewtonDivergence { y: Vec<f64> },

    #[error("fast root at y = {y:?} is not asymptotically stable (max eigenvalue real part {max_real})")]
    UnstableRoot { y: Vec<f64>, max_real: f64 },

    #[error("transition `{0}` carries no slow/fast tag")]
    Untagged(String),

    #[error("model has no {0} transitions")]
    EmptyPartition(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("replicate {replicate}: {source}")]
    Replicate { replicate: usize, source: Box<Error> },
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        }
    }
}
