//! Error type shared by all modules of the crate.

use std::fmt;
use std::io;

/// Errors raised by cube/map I/O, parameter validation and the
/// decomposition pipeline.
#[derive(Debug)]
pub enum Error {
    /// Underlying I/O failure.
    Io(io::Error),
    /// A cube file did not start with the `HSIC` magic bytes.
    BadMagic([u8; 4]),
    /// A cube file declared an unknown container version.
    BadVersion(u8),
    /// Header dimensions disagree with the payload length.
    Truncated { expected: usize, found: usize },
    /// A value that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// Shape constraints violated (H >= 2, W >= 2, C >= 1, length checks).
    InvalidDimensions(String),
    /// A numeric parameter is outside its documented range.
    InvalidParameter(String),
    /// Input is degenerate for the requested operation (e.g. all-zero cube).
    DegenerateInput(&'static str),
    /// Text parse failure (CSV / config files), with the 1-based line.
    Parse { line: usize, msg: String },
    /// A CSV row has a different number of fields than the first row.
    RaggedRow { row: usize, expected: usize, found: usize },
    /// A mask entry was neither 0 nor 1.
    NonBinaryValue { row: usize, col: usize },
    /// A metric operation needs at least one anomalous and one background pixel.
    SingleClassMask,
    /// The exact-enumeration oracle refuses grids above its size limit.
    GridTooLarge { pixels: usize, limit: usize },
    /// The requested construction cannot be satisfied (e.g. too many
    /// isolated anomalies for the grid).
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "io: {e}"),
            Error::BadMagic(m) => write!(f, "bad magic {:?}, expected \"HSIC\"", m),
            Error::BadVersion(v) => write!(f, "unsupported container version {v}"),
            Error::Truncated { expected, found } => {
                write!(f, "truncated payload: expected {expected} values, found {found}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidDimensions(msg) => write!(f, "invalid dimensions: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::DegenerateInput(what) => write!(f, "degenerate input: {what}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::RaggedRow { row, expected, found } => {
                write!(f, "ragged row {row}: expected {expected} fields, found {found}")
            }
            Error::NonBinaryValue { row, col } => {
                write!(f, "mask entry at ({row},{col}) is not 0 or 1")
            }
            Error::SingleClassMask => {
                write!(f, "mask must contain both anomalous and background pixels")
            }
            Error::GridTooLarge { pixels, limit } => {
                write!(f, "grid of {pixels} pixels exceeds the enumeration limit of {limit}")
            }
            Error::Infeasible(msg) => write!(f, "infeasible request: {msg}"),
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

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
