use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor extents or ranks do not line up.
    Shape(String),
    /// Operands have different element types.
    DType(String),
    /// A reduction was asked to sum nothing.
    EmptyReduction,
    /// A user-supplied value is outside its allowed domain.
    InvalidConfig(String),
    /// Dangling tensor reference, duplicate id, or a bad node set.
    Graph(String),
    /// The operator name is not part of the closed [`crate::OpKind`] set.
    UnsupportedOp(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape(msg) => write!(f, "shape error: {msg}"),
            Self::DType(msg) => write!(f, "dtype error: {msg}"),
            Self::EmptyReduction => f.write_str("empty reduction"),
            Self::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Self::Graph(msg) => write!(f, "graph error: {msg}"),
            Self::UnsupportedOp(op) => write!(f, "unsupported op: {op}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use shape_err;
