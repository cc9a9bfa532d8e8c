use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("degenerate orientation: quaternion norm {norm} is too small")]
    DegenerateOrientation { norm: f64 },
    #[error("degenerate average: mean quaternion norm {norm} below threshold")]
    DegenerateAverage { norm: f64 },
    #[error("degenerate view: camera position is inside landmark {landmark_id}")]
    DegenerateView { landmark_id: usize },
    #[error("degenerate beta estimate: {0}")]
    DegenerateEstimate(String),
    #[error("degenerate pretext dataset: {0}")]
    DegeneratePretext(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
