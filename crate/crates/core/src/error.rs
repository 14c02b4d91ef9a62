//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("missing input binding '{name}'")]
    MissingInput { name: String },

    #[error("index out of range: {context}")]
    IndexOutOfRange { context: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("dimension {dim} exceeds dense-operator guard of {guard}")]
    DimGuard { dim: usize, guard: usize },

    #[error("invalid config field '{field}': {message}")]
    InvalidConfig { field: String, message: String },

    #[error("matrix not symmetric: max asymmetry {max_asym:e} exceeds tolerance {tol:e}")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error("selection entries overlap at flat index {index}")]
    OverlappingSelection { index: usize },

    #[error("group '{name}' is empty")]
    EmptyGroup { name: String },

    #[error("unknown group '{name}' (known: {known})")]
    UnknownGroup { name: String, known: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("in group '{group}': {source}")]
    GroupContext {
        group: String,
        #[source]
        source: Box<Error>,
    },

    #[error("eigensolver failed to converge for eigenvalue index {index}")]
    EigenNoConverge { index: usize },

    #[error("missing artifact: {path}")]
    MissingArtifact { path: String },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("format error: {message}")]
    Format { message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    TomlParse(String),
}

impl Error {
    /// Wrap an error with the parameter group it occurred in.
    pub fn in_group(self, group: &str) -> Error {
        Error::GroupContext { group: group.to_string(), source: Box::new(self) }
    }

    /// The innermost error, looking through group-context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::GroupContext { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
