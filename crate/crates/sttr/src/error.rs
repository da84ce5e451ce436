//! Error type shared across the crate.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Tensor shapes that the requested op cannot reconcile.
    Shape(String),
    /// Bad model or training configuration.
    Config(String),
    /// Malformed or truncated image data.
    ImageDecode(String),
    /// Checkpoint bytes that do not parse.
    CheckpointCorrupt(String),
    /// Checkpoint with an unsupported format version.
    CheckpointVersion { found: u32, supported: u32 },
    /// Checkpoint tensor whose shape disagrees with the model; names the tensor.
    CheckpointShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::ImageDecode(m) => write!(f, "image decode error: {m}"),
            Error::CheckpointCorrupt(m) => write!(f, "corrupt checkpoint: {m}"),
            Error::CheckpointVersion { found, supported } => {
                write!(f, "checkpoint version {found} not supported (expected {supported})")
            }
            Error::CheckpointShape { name, expected, found } => write!(
                f,
                "checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line tools: 1 for unreadable input,
    /// 2 for a checkpoint or config that does not match what was asked for.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::CheckpointVersion { .. }
            | Error::CheckpointShape { .. } => 2,
            _ => 1,
        }
    }
}
