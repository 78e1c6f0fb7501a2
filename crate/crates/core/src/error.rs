use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid ink: {0}")]
    Validation(String),

    #[error("degenerate stroke: {0}")]
    DegenerateStroke(String),

    #[error("invalid drop plan: {0}")]
    InvalidDropPlan(String),

    #[error("signature level mismatch: {left} vs {right}")]
    LevelMismatch { left: usize, right: usize },

    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown writer label `{0}`")]
    UnknownWriter(String),

    #[error("page `{0}` has no characters")]
    EmptyPage(String),
}

impl Error {
    /// Short stable identifier used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::DegenerateStroke(_) => "degenerate_stroke",
            Error::InvalidDropPlan(_) => "invalid_drop_plan",
            Error::LevelMismatch { .. } => "level_mismatch",
            Error::Shape { .. } => "shape",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::ModelFormat(_) => "model_format",
            Error::Config(_) => "config",
            Error::UnknownWriter(_) => "unknown_writer",
            Error::EmptyPage(_) => "empty_page",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
