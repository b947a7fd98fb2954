use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad flags, bad config, unsupported parameter combinations.
    Usage,
    /// Input data failed validation.
    Data,
    /// The chat endpoint failed or rejected us.
    Upstream,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Malformed {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("question {question}: option label {label:?} is not one of {options:?}")]
    UnknownOption {
        question: String,
        label: String,
        options: Vec<String>,
    },

    #[error("question {0:?} is not in the question manifest")]
    UnknownQuestion(String),

    #[error("question {0:?} appears more than once with different option lists")]
    ConflictingQuestion(String),

    #[error("invalid question {question:?}: {reason}")]
    InvalidQuestion { question: String, reason: String },

    #[error("untestable pair {question} / {subgroup}: {reason}")]
    Untestable {
        question: String,
        subgroup: String,
        reason: String,
    },

    #[error("counts sum to zero")]
    EmptyCounts,

    #[error("count vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no tabulated KS critical values for alpha = {0}; use the asymptotic formula path")]
    AlphaNotTabulated(f64),

    #[error("exact enumeration needs {splits} count-splits (limit {limit}); use Monte-Carlo")]
    EnumerationTooLarge { splits: u64, limit: u64 },

    #[error("no testable pairs for {0}")]
    NothingTestable(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("no prompt template for subgroup dimension {dimension:?}; registered: {registered}")]
    UnknownDimension {
        dimension: String,
        registered: String,
    },

    #[error(
        "human and LLM data cover different questions; only human: [{}]; only LLM: [{}]",
        only_human.join(", "),
        only_llm.join(", ")
    )]
    QuestionSetMismatch {
        only_human: Vec<String>,
        only_llm: Vec<String>,
    },

    #[error("environment variable {0} holding the API key is not set")]
    MissingSecret(String),

    #[error("endpoint failure ({context}): {msg}")]
    Upstream { context: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::AlphaNotTabulated(_)
            | Error::EnumerationTooLarge { .. }
            | Error::UnknownDimension { .. }
            | Error::MissingSecret(_) => ErrorClass::Usage,
            Error::Upstream { .. } => ErrorClass::Upstream,
            _ => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
