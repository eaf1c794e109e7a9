use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the domain an operation accepts.
    #[error("input domain error: {0}")]
    InputDomain(String),

    #[error("construction error: {0}")]
    Construction(String),

    /// A state component became NaN or infinite.
    #[error("simulation diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },

    /// The pendulum plane cannot realize the commanded direction.
    #[error("degenerate command: pendulum plane cannot project onto the commanded direction")]
    DegenerateCommand,

    #[error("corrupted model: {0}")]
    CorruptedModel(String),

    #[error("degenerate calibration: layer {layer} has zero dynamic range")]
    DegenerateCalibration { layer: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    /// An update produced a non-finite loss or a write failed mid-run.
    #[error("training aborted at iteration {iteration}: {what}")]
    Training { iteration: usize, what: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("log error: {0}")]
    Log(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
