use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("missing field: {field} @ line {line}")]
    MissingField { field: &'static str, line: usize },

    #[error("malformed record @ line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate document id: {0}")]
    DuplicateId(String),

    #[error("unknown document id: {0}")]
    UnknownDocument(String),

    #[error("invalid argument `{name}`: {message}")]
    InvalidArgument { name: &'static str, message: String },

    #[error("dimension mismatch @ line {line}: expected {expected} values, found {found}")]
    DimensionAtLine {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedding dim {dim} exceeds available rank {rank}; choose dim <= {rank}")]
    RankTooSmall { dim: usize, rank: usize },

    #[error("empty document")]
    EmptyDocument,

    #[error("empty query")]
    EmptyQuery,

    #[error("empty sequence")]
    EmptySequence,

    #[error("position {0} is not a masked slot")]
    NotMasked(usize),

    #[error("candidate still contains masked slots")]
    UnfilledMask,

    #[error("empty prediction distribution")]
    EmptyDistribution,

    #[error("no flipping candidates to select from")]
    NoCandidates,

    #[error("not a valid counterfactual target: rel(q,d)={doc_score} is not greater than rel(q,d')={counter_score}")]
    InvalidTriplet { doc_score: f64, counter_score: f64 },

    #[error("unknown method: {0}")]
    UnknownMethod(String),

    #[error("no records")]
    NoRecords,

    #[error("{role} backend unavailable after {attempts} attempt(s): {last}")]
    BackendUnavailable {
        role: &'static str,
        attempts: usize,
        last: String,
    },

    #[error("protocol error in `{field}`: {message}")]
    Protocol { field: String, message: String },

    #[error("artifact not found at {path}; run `{hint}` first")]
    MissingArtifact { path: PathBuf, hint: &'static str },

    #[error("artifact {path} was built with config {found}, expected {expected}; rerun `index`")]
    ConfigMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("artifact {path}: {message}")]
    BadArtifact { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn protocol(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Protocol {
            field: field.into(),
            message: message.into(),
        }
    }
}
