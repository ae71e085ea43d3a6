//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch dimensions do not line up. Carries a human-readable
    /// dimension report naming the operation.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid label {label}: class count is {classes}")]
    InvalidLabel { label: usize, classes: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A detector pipeline was asked for more representation models than the
    /// pool holds.
    #[error("insufficient model pool: need {need}, have {have}")]
    InsufficientPool { need: usize, have: usize },

    /// Unit-wise control cannot use more units than the representation width.
    /// Draw from the treatment arm (or widen the penultimate layer) to go
    /// beyond it.
    #[error(
        "unit-wise control needs N <= representation width: N={n}, width={width}; \
         use the treatment arm to exceed the width of a single model"
    )]
    UnitCountExceedsWidth { n: usize, width: usize },

    #[error("detector training needs both classes present in the labels")]
    SingleClassData,

    /// A harness stage failed; the stage name is preserved so partial runs
    /// can be diagnosed and resumed.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}
