use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("unsupported hash algorithm `{0}`")]
    UnsupportedHash(String),

    #[error("unsupported signature algorithm `{0}`")]
    UnsupportedSignature(String),

    #[error("invalid params: {0}")]
    InvalidParams(String),

    #[error("ticket carries {found} tip hashes, expected {expected}")]
    TipCount { expected: usize, found: usize },

    #[error("seed must be {expected} bytes, got {found}")]
    SeedLength { expected: usize, found: usize },

    #[error("chain index {index} out of range for {count} strands")]
    IndexOutOfRange { index: u64, count: u64 },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("invalid simulation config: {0}")]
    Config(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error("trace integrity failure: {0}")]
    Integrity(String),

    #[error("analysis error: {0}")]
    Analysis(String),
}
