use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    Contract(String),

    #[error("need at least 4 frames to produce an encoder position, got {0}")]
    TooFewFrames(usize),

    #[error("encoder has produced no positions yet")]
    EmptyEncoderOutput,

    #[error("stream already closed by a final feed")]
    StreamClosed,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f32 },

    #[error("malformed {what} at {path}:{line}: {msg}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid file format: {0}")]
    Format(String),

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
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
