use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("respondent `{respondent}` answered `{answer}` to question `{question}`, which is not in its answer set")]
    AnswerDomain {
        respondent: String,
        question: String,
        answer: String,
    },

    #[error("no answered questions in scope `{scope}` for respondent `{respondent}`")]
    EmptyScope { respondent: String, scope: String },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("backend unavailable after {retries} retries: {message}")]
    BackendUnavailable { retries: u32, message: String },

    #[error("backend rejected request: {0}")]
    BackendRejected(String),

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("backend returned an empty completion")]
    EmptyCompletion,

    #[error("mock script exhausted for matcher {0}")]
    ScriptExhausted(String),

    #[error("unknown template `{0}`")]
    UnknownTemplate(String),

    #[error("template placeholder `{0}` has no value")]
    UnfilledPlaceholder(String),

    #[error("prediction condition `{0}` requires a persona or raw narrative")]
    MissingPersona(String),

    #[error("question `{0}` has no response")]
    MissingAnswer(String),

    #[error("could not match model output {raw:?} to an answer")]
    UnparseableAnswer { raw: String },

    #[error("every persona candidate for respondent `{0}` was unscorable")]
    AllCandidatesFailed(String),

    #[error("no scorable predictions")]
    NoScorable,

    #[error("empty sample")]
    EmptySample,

    #[error("value {value} outside support 1..={m}")]
    OutOfSupport { value: usize, m: usize },

    #[error("support mismatch: {0} vs {1}")]
    SupportMismatch(usize, usize),

    #[error("all questions were skipped")]
    AllSkipped,

    #[error("bootstrap needs at least 2 units, got {0}")]
    TooFewUnits(usize),

    #[error("no personas reached the selection threshold {0}")]
    NoPersonasSurvive(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema_error",
            Error::AnswerDomain { .. } => "answer_domain_error",
            Error::EmptyScope { .. } => "empty_scope",
            Error::InvalidRequest(_) => "invalid_request",
            Error::BackendUnavailable { .. } => "backend_unavailable",
            Error::BackendRejected(_) => "backend_rejected",
            Error::BudgetExceeded(_) => "budget_exceeded",
            Error::EmptyCompletion => "empty_completion",
            Error::ScriptExhausted(_) => "script_exhausted",
            Error::UnknownTemplate(_) => "unknown_template",
            Error::UnfilledPlaceholder(_) => "unfilled_placeholder",
            Error::MissingPersona(_) => "missing_persona",
            Error::MissingAnswer(_) => "missing_answer",
            Error::UnparseableAnswer { .. } => "unparseable_answer",
            Error::AllCandidatesFailed(_) => "all_candidates_failed",
            Error::NoScorable => "no_scorable",
            Error::EmptySample => "empty_sample",
            Error::OutOfSupport { .. } => "out_of_support",
            Error::SupportMismatch(..) => "support_mismatch",
            Error::AllSkipped => "all_skipped",
            Error::TooFewUnits(_) => "too_few_units",
            Error::NoPersonasSurvive(_) => "no_personas_survive",
            Error::Config(_) => "config_error",
            Error::Io { .. } => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}
