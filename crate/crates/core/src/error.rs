use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A signed value does not fit the signed band of the ring.
    #[error("value {value} is outside the representable range [{min}, {max}] for m = {bits}")]
    Range {
        value: i128,
        min: i128,
        max: i128,
        bits: u32,
    },
    #[error("unsupported modulus width {0}; expected one of 8, 16, 32, 64")]
    UnsupportedModulus(u32),
    #[error("modulus mismatch: 2^{left} vs 2^{right}")]
    ModulusMismatch { left: u32, right: u32 },
    #[error("bit index {index} out of range for m = {bits}")]
    BitIndex { index: u32, bits: u32 },
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("session mismatch: expected {expected}, found {found}")]
    SessionMismatch { expected: u64, found: u64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{kind} triples exhausted: needed {needed}, {available} available")]
    TripleExhausted {
        kind: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("{kind} triple batch starting at index {first_index} reuses triples (next expected {expected})")]
    TripleReuse {
        kind: &'static str,
        first_index: u64,
        expected: u64,
    },
    #[error("{kind} triple batch starting at index {first_index} leaves a gap (next expected {expected})")]
    TripleGap {
        kind: &'static str,
        first_index: u64,
        expected: u64,
    },
    #[error("integer overflow: {0}")]
    Overflow(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("protocol desync: {0}")]
    Desync(String),
    #[error("peer aborted: {0}")]
    PeerAborted(String),
    #[error("unexpected message: {0}")]
    UnexpectedMessage(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("connection closed: {0}")]
    Disconnected(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
