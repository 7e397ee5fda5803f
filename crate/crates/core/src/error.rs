use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the pipeline.
///
/// The variants line up with the CLI exit codes: configuration problems,
/// data problems (bad corpora, bad files) and everything else.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operands whose shapes are incompatible for the requested operation.
    Shape(String),
    /// An argument outside the operation's domain.
    Argument(String),
    /// An index (token id, class id, row) outside its valid range.
    Index(String),
    /// An API used out of order, e.g. backward on a consumed tape.
    Usage(String),
    /// A binary container that failed validation.
    Format(String),
    /// A malformed line in a JSON Lines file.
    Parse { line: usize, message: String },
    /// Well-formed input that violates a data contract.
    Data(String),
    /// Inconsistent run configuration, detected before any work starts.
    Config(String),
    /// A statistical test that is undefined for its inputs.
    Stats(String),
    Io(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Format(_) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Stats(m) => write!(f, "statistics error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
