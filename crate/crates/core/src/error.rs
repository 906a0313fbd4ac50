use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: missing column \"{column}\"")]
    MissingColumn { column: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("parse error at row {row}, column \"{column}\": cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("duplicate component id \"{0}\"")]
    DuplicateComponent(String),

    #[error("unknown component id \"{0}\"")]
    UnknownComponent(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("profiling failed on run {run}: {message}")]
    Profiling { run: usize, message: String },

    #[error("executor error: {0}")]
    Executor(String),

    #[error("solver error{}: {message}", window.map(|w| format!(" in window {w}")).unwrap_or_default())]
    Solver {
        window: Option<usize>,
        message: String,
    },

    #[error("empty catalog")]
    EmptyCatalog,

    #[error("provider error on attempt {attempt}: {message}")]
    Provider { attempt: usize, message: String },

    #[error("grid mismatch: {0}")]
    Grid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
