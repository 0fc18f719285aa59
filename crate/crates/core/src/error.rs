use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A class index or class name outside the active label scheme.
    #[error("label error: {0}")]
    Label(String),

    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an operation precondition (non-scalar loss, missing gradient, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint integrity error at byte {offset}: {reason}")]
    Integrity { offset: u64, reason: String },

    /// An input file (image, prediction target) could not be used.
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Dimension { .. } => 1,
            Error::Label(_) | Error::Data(_) | Error::Input(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
            Error::Integrity { .. } => 4,
        }
    }
}
