use thiserror::Error;

/// Every variant carries the `module::operation` that raised it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: invalid parameter: {msg}")]
    InvalidParameter { op: &'static str, msg: String },
    #[error("{op}: unsupported in direct-R mode: {msg}")]
    UnsupportedMode { op: &'static str, msg: String },
    #[error("{op}: singular argument: {msg}")]
    Singularity { op: &'static str, msg: String },
    #[error("{op}: out of domain: {msg}")]
    OutOfDomain { op: &'static str, msg: String },
    #[error("{op}: path escaped the noise box: {msg}")]
    PathEscape { op: &'static str, msg: String },
    #[error("{op}: numerical overflow: {msg}")]
    NumericalOverflow { op: &'static str, msg: String },
    #[error("{op}: supercritical beta: {msg}")]
    SupercriticalBeta { op: &'static str, msg: String },
    #[error("{op}: invalid bracket: {msg}")]
    InvalidBracket { op: &'static str, msg: String },
    #[error("{op}: unsupported order: {msg}")]
    UnsupportedOrder { op: &'static str, msg: String },
    #[error("{op}: invalid reference law: {msg}")]
    InvalidReference { op: &'static str, msg: String },
    #[error("{op}: inner Monte-Carlo degenerate: {msg}")]
    InnerMcDegenerate { op: &'static str, msg: String },
    #[error("{op}: config: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("{op}: io: {msg}")]
    Io { op: &'static str, msg: String },
}

impl Error {
    /// 2 for validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::PathEscape { .. }
            | Error::NumericalOverflow { .. }
            | Error::SupercriticalBeta { .. }
            | Error::InnerMcDegenerate { .. } => 3,
            _ => 2,
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            Error::InvalidParameter { op, .. }
            | Error::UnsupportedMode { op, .. }
            | Error::Singularity { op, .. }
            | Error::OutOfDomain { op, .. }
            | Error::PathEscape { op, .. }
            | Error::NumericalOverflow { op, .. }
            | Error::SupercriticalBeta { op, .. }
            | Error::InvalidBracket { op, .. }
            | Error::UnsupportedOrder { op, .. }
            | Error::InvalidReference { op, .. }
            | Error::InnerMcDegenerate { op, .. }
            | Error::Config { op, .. }
            | Error::Io { op, .. } => op,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidParameter { op, msg: msg.into() }
}
