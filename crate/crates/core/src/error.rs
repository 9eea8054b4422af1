use std::error::Error as StdError;
use std::fmt;
use std::io;

/// Errors raised across the engine. Variants carry enough context to be
/// printed directly as a diagnostic.
#[derive(Debug)]
pub enum Error {
    Shape(String),
    EmptyInput(&'static str),
    NonFinite(String),
    InvalidArgument(String),
    InvalidSpec(String),
    /// `backward` called twice on one recording without a fresh forward.
    BackwardTwice,
    NotScalar(Vec<usize>),
    LabelOutOfRange { label: usize, classes: usize },
    ConflictingOverride(usize),
    MissingGate,
    NoSamples(String),
    Format(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidSpec(msg) => write!(f, "invalid model spec: {msg}"),
            Error::BackwardTwice => {
                write!(f, "backward already ran on this recording; reset and re-run forward")
            }
            Error::NotScalar(shape) => write!(f, "backward requires a scalar loss, got shape {shape:?}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::ConflictingOverride(ch) => write!(f, "conflicting overrides for channel {ch}"),
            Error::MissingGate => write!(f, "model has no input SE gate"),
            Error::NoSamples(msg) => write!(f, "no samples: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl StdError for Error {
    fn source(&self) -> Option<&(dyn StdError + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Format(e.to_string())
    }
}
