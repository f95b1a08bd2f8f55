use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("unsupported mask: {0}")]
    UnsupportedMask(String),
    #[error("cannot step below t = 0")]
    StepUnderflow,
    #[error("schedule value alpha = {alpha:e} is below the adapter threshold {eps:e}")]
    NearZeroAlpha { alpha: f64, eps: f64 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("slice {slice}: {source}")]
    Slice {
        slice: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("stage {stage}, step {step}: {source}")]
    Step {
        stage: char,
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// The innermost error, with slice/step context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Slice { source, .. } | Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Transport(_) | Error::Protocol(_) => 4,
            Error::Solver(_) | Error::Calibration(_) | Error::NearZeroAlpha { .. } => 5,
            _ => 3,
        }
    }
}
