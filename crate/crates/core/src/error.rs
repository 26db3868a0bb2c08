use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rate support is not strongly connected")]
    NotIrreducible,
    #[error("negative rate {rate} at ({x}, {y})")]
    NegativeRate { x: usize, y: usize, rate: f64 },
    #[error("bad index: {0}")]
    BadIndex(String),
    #[error("adjacency graph is disconnected")]
    Disconnected,
    #[error("vertex {0} has zero degree")]
    ZeroDegree(usize),
    #[error("adjacency matrix is not symmetric at ({0}, {1})")]
    AsymmetricAdjacency(usize, usize),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("random graph still disconnected after {0} attempts")]
    PersistentlyDisconnected(u32),
    #[error("kernel is not reversible")]
    NotReversible,
    #[error("iteration did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("site set is empty")]
    EmptySet,
    #[error("site set is the whole state space")]
    FullSet,
    #[error("exhaustive search needs n <= {cap}, got {n}")]
    TooLargeForExhaustive { n: usize, cap: usize },
    #[error("strategy does not apply: {0}")]
    StrategyMismatch(String),
    #[error("voter state is absorbed at consensus")]
    AbsorbedState,
    #[error("order {0} exceeds the supported cap")]
    Overflow(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least {needed} ladder points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("{label}: {inner}")]
    Instance { label: String, inner: Box<Error> },
}

impl Error {
    /// Tags an error with the instance it came from.
    pub fn at(self, label: &str) -> Error {
        Error::Instance {
            label: label.to_string(),
            inner: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
