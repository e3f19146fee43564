use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("malformed matrix file: {0}")]
    MalformedMatrix(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("record {id} has a non-finite component")]
    NonFiniteVector { id: String },

    #[error("record {id} has a zero vector and cannot be normalized")]
    ZeroVector { id: String },

    #[error("unknown embedding id {0:?}")]
    UnknownId(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("candidate list is empty")]
    EmptyCandidates,

    #[error("support set is empty")]
    EmptySupport,

    #[error("requested {requested} examples but the support set holds {available}")]
    NotEnoughSupport { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("template {template:?} is missing placeholder {placeholder}")]
    TemplateMissingPlaceholder {
        template: String,
        placeholder: &'static str,
    },

    #[error("backend {endpoint} unavailable after {elapsed:?}: {reason}")]
    BackendUnavailable {
        endpoint: String,
        elapsed: Duration,
        reason: String,
    },

    #[error("backend reported {code}: {message}")]
    BackendError { code: String, message: String },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("candidate {0:?} missing from backend response")]
    CandidateMissingFromResponse(String),

    #[error("backend returned an empty description for {label:?}")]
    EmptyGeneration { label: String },

    #[error("token log-probability list is empty")]
    EmptyTokenList,

    #[error("non-finite token log-probability")]
    NonFiniteLogProb,

    #[error("positive token log-probability {0}")]
    PositiveLogProb(f64),

    #[error("class sets differ: {0}")]
    ClassSetMismatch(String),

    #[error("malformed description cache at line {line}: {reason}")]
    MalformedCache { line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("support and test splits share {} image(s), first {:?}", .0.len(), .0.first())]
    DisjointnessViolation(Vec<String>),
}

/// Coarse grouping used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Backend,
    Other,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::BackendUnavailable { .. }
            | Error::BackendError { .. }
            | Error::ProtocolViolation(_)
            | Error::CandidateMissingFromResponse(_)
            | Error::EmptyGeneration { .. } => ErrorClass::Backend,
            Error::Io { .. }
            | Error::MalformedManifest { .. }
            | Error::MalformedMatrix(_)
            | Error::DimensionMismatch { .. }
            | Error::NonFiniteVector { .. }
            | Error::ZeroVector { .. }
            | Error::UnknownId(_)
            | Error::UnknownLabel(_)
            | Error::NotEnoughSupport { .. }
            | Error::EmptySupport
            | Error::TemplateMissingPlaceholder { .. }
            | Error::MalformedCache { .. }
            | Error::ConfigInvalid(_)
            | Error::DisjointnessViolation(_) => ErrorClass::Config,
            _ => ErrorClass::Other,
        }
    }

    /// Short stable code recorded in per-image error entries.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedManifest { .. } => "malformed_manifest",
            Error::MalformedMatrix(_) => "malformed_matrix",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFiniteVector { .. } => "non_finite_vector",
            Error::ZeroVector { .. } => "zero_vector",
            Error::UnknownId(_) => "unknown_id",
            Error::UnknownLabel(_) => "unknown_label",
            Error::EmptyCandidates => "empty_candidates",
            Error::EmptySupport => "empty_support",
            Error::NotEnoughSupport { .. } => "not_enough_support",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::TemplateMissingPlaceholder { .. } => "template_missing_placeholder",
            Error::BackendUnavailable { .. } => "backend_unavailable",
            Error::BackendError { .. } => "backend_error",
            Error::ProtocolViolation(_) => "protocol_violation",
            Error::CandidateMissingFromResponse(_) => "candidate_missing",
            Error::EmptyGeneration { .. } => "empty_generation",
            Error::EmptyTokenList => "empty_token_list",
            Error::NonFiniteLogProb => "non_finite_logprob",
            Error::PositiveLogProb(_) => "positive_logprob",
            Error::ClassSetMismatch(_) => "class_set_mismatch",
            Error::MalformedCache { .. } => "malformed_cache",
            Error::ConfigInvalid(_) => "config_invalid",
            Error::DisjointnessViolation(_) => "disjointness_violation",
        }
    }
}
