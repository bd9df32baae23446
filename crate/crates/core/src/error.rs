use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or problem data. `path` names the offending key.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("index {index} out of range (length {len}) in {what}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("space mismatch in {what}: {message}")]
    Space { what: &'static str, message: String },

    /// Zero pivot during factorization of the named block.
    #[error("singular {block} system (zero pivot at row {row})")]
    Singular { block: &'static str, row: usize },

    #[error("{stage} did not converge: {message}")]
    NoConvergence { stage: &'static str, message: String },

    /// A solver failure tagged with the time step (or optimizer iterate) it occurred at.
    #[error("{stage} failed at {index_kind} {index}: {source}")]
    AtStep {
        stage: &'static str,
        index_kind: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, stage: &'static str, index: usize) -> Self {
        Error::AtStep {
            stage,
            index_kind: "step",
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_iterate(self, stage: &'static str, index: usize) -> Self {
        Error::AtStep {
            stage,
            index_kind: "iterate",
            index,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Verification(_) => 4,
            Error::AtStep { source, .. } => source.exit_code(),
            Error::Io { .. } => 3,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
