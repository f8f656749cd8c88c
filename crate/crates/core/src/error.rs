use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario parameter `{field}` = {value} outside [{lo}, {hi}]")]
    ScenarioOutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("degenerate gap {0} m: the episode should have terminated on collision")]
    DegenerateGap(f64),

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch is not terminated: last transition must end an episode or carry a bootstrap value")]
    UnterminatedBatch,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("evaluation budget of {budget} exceeded: {requested} evaluations requested")]
    BudgetExceeded { budget: usize, requested: usize },

    #[error("all {0} walkers are identical; mutation kernel cannot make progress")]
    DegeneratePopulation(usize),

    #[error("covariance matrix not positive definite after jitter {0:e}")]
    SingularCovariance(f64),

    #[error("weight file parse error at byte {offset}: {reason}")]
    WeightFormat { offset: usize, reason: String },

    #[error("{path}:{line}: {reason}")]
    LibraryFormat {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("generation index {got} is not contiguous (expected {expected})")]
    GenerationGap { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ScenarioOutOfRange { .. } => "scenario_out_of_range",
            Error::DegenerateGap(_) => "degenerate_gap",
            Error::EpisodeFinished => "episode_finished",
            Error::NonFinite { .. } => "non_finite",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnterminatedBatch => "unterminated_batch",
            Error::Diverged(_) => "diverged",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::DegeneratePopulation(_) => "degenerate_population",
            Error::SingularCovariance(_) => "singular_covariance",
            Error::WeightFormat { .. } => "weight_format",
            Error::LibraryFormat { .. } => "library_format",
            Error::GenerationGap { .. } => "generation_gap",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
