use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid class count {0}: at least two classes are required")]
    InvalidClassCount(usize),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate likelihood: every class has zero likelihood")]
    DegenerateLikelihood,

    #[error("invalid marginal: class {0} has a non-positive marginal probability")]
    InvalidMarginal(usize),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid thresholds: {0}")]
    InvalidThreshold(String),

    #[error("insufficient training data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("region out of bounds: {0}")]
    Bounds(String),

    #[error("date split error: {0}")]
    Split(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("malformed container: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::InvalidClassCount(_)
            | Error::InvalidHyperparameter(_)
            | Error::InvalidThreshold(_)
            | Error::InvalidArgument(_)
            | Error::Config(_) => 1,
            Error::DegenerateLikelihood
            | Error::InvalidMarginal(_)
            | Error::InvalidProbability(_)
            | Error::Numerical(_) => 3,
            Error::Shape(_)
            | Error::InsufficientData(_)
            | Error::Bounds(_)
            | Error::Split(_)
            | Error::Evaluation(_)
            | Error::Load { .. }
            | Error::Format(_)
            | Error::Io(_) => 2,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
