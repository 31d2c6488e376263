//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the library.
#[derive(Debug)]
pub enum Error {
    /// A primitive was applied to tensors whose shapes do not conform.
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
        detail: String,
    },
    /// A tensor constructor received an invalid shape or data length.
    InvalidTensor { detail: String },
    /// Every entry of a softmax/normalization group was masked out (or the
    /// normalizer vanished).
    AllMasked { op: &'static str },
    /// `backward` was called on a non-scalar output.
    LossNotScalar { shape: Vec<usize> },
    /// `backward` was called on an empty tape.
    EmptyTape,
    /// A non-finite value appeared where a finite one is required.
    NonFinite { context: String },
    /// Gold index outside the candidate range.
    GoldOutOfRange { gold: usize, len: usize },
    /// A named parameter was defined twice.
    DuplicateParameter { name: String },
    /// A named parameter does not exist in the store.
    UnknownParameter { name: String },
    /// A data file failed to parse; `line` is 1-based.
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    /// Duplicate (word, pos) entry in a grounding file.
    DuplicateEntry { word: String, pos: char, line: usize },
    /// A sense's hypernym path does not start with the sense itself.
    PathNotStartingAtSense { sense: String, word: String },
    /// The hypernym edge list contains a cycle; `witness` lists one.
    Cycle { witness: Vec<String> },
    /// Invalid configuration value.
    Config { detail: String },
    /// Dataset or instance validation failure.
    Data { detail: String },
    /// I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, shapes, detail } => {
                let rendered: Vec<String> = shapes.iter().map(|s| format!("{s:?}")).collect();
                write!(f, "shape mismatch in `{op}` on [{}]: {detail}", rendered.join(", "))
            }
            Error::InvalidTensor { detail } => write!(f, "invalid tensor: {detail}"),
            Error::AllMasked { op } => {
                write!(f, "`{op}`: every entry of the normalization group is masked")
            }
            Error::LossNotScalar { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::EmptyTape => write!(f, "backward on an empty tape"),
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::GoldOutOfRange { gold, len } => {
                write!(f, "gold index {gold} out of range for {len} candidates")
            }
            Error::DuplicateParameter { name } => {
                write!(f, "parameter `{name}` defined twice")
            }
            Error::UnknownParameter { name } => write!(f, "unknown parameter `{name}`"),
            Error::Parse { path, line, detail } => {
                write!(f, "{path}:{line}: {detail}")
            }
            Error::DuplicateEntry { word, pos, line } => {
                write!(f, "line {line}: duplicate grounding entry for (\"{word}\", {pos})")
            }
            Error::PathNotStartingAtSense { sense, word } => {
                write!(
                    f,
                    "hypernym path of sense `{sense}` (word \"{word}\") does not start with the sense itself"
                )
            }
            Error::Cycle { witness } => {
                write!(f, "hypernym graph contains a cycle: {}", witness.join(" -> "))
            }
            Error::Config { detail } => write!(f, "invalid config: {detail}"),
            Error::Data { detail } => write!(f, "invalid data: {detail}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
