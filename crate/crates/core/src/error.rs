use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("structure {0} has a zero block; a unital structure is required")]
    NotUnital(String),

    /// The observed outcome has (numerically) zero probability under the model.
    #[error("outcome probability {probability:e} is below the floor")]
    ZeroProbabilityBranch { probability: f64 },

    #[error("non-finite value in {what}{}", index.map(|i| format!(" at parameter {i}")).unwrap_or_default())]
    NonFinite { what: String, index: Option<usize> },

    #[error("structure {0} is not part of the hierarchy")]
    UnknownStructure(String),

    #[error("parameters cannot be carried into the target structure: {0}")]
    NotRepresentable(String),

    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
