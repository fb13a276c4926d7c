use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("alias `{alias}` is claimed by both `{first}` and `{second}`")]
    AmbiguousAlias {
        alias: String,
        first: String,
        second: String,
    },

    #[error("{path}: missing column `{column}`")]
    Schema { path: String, column: String },

    #[error("input file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("span {start}..{end} is not a valid character interval of a {len}-byte text")]
    InvalidSpan {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),

    #[error("kappa is undefined when chance agreement equals 1")]
    UndefinedKappa,

    #[error("empty validation sample")]
    EmptySample,

    #[error("cannot sample {requested} events from a population of {population}")]
    SampleTooLarge { requested: usize, population: usize },

    #[error("rate {value} for {what} is outside [0, 1]")]
    InvalidRate { what: String, value: f64 },

    #[error("cohort is empty: no patient has a qualifying `{0}` episode")]
    EmptyCohort(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
