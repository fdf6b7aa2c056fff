use std::path::PathBuf;

use crate::modelpack::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {layer}: {detail}")]
    Dimension { layer: String, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unknown symptoms: {}", .0.join(", "))]
    UnknownSymptoms(Vec<String>),

    #[error("no symptoms given; select at least one symptom or pass allow_empty")]
    EmptySymptoms,

    #[error("cannot quantize: element {index} is {value}")]
    Quantization { index: usize, value: f32 },

    #[error("training aborted at epoch {epoch}, step {step}: {detail}")]
    TrainingDiverged { epoch: usize, step: u64, detail: String },

    #[error("integrity check failed: {}", fmt_violations(.0))]
    Integrity(Vec<Violation>),

    #[error("record {index} at byte {offset}: {detail}")]
    Record { index: u64, offset: u64, detail: String },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn dim(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension { layer: layer.into(), detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
