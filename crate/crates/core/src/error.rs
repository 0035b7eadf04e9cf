use thiserror::Error;

/// Errors raised by the DD package, the engines and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdError {
    #[error("non-finite complex value {re}+{im}i")]
    NonFinite { re: f64, im: f64 },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("basis index {bits} out of range for {n} qubits")]
    BasisOutOfRange { n: usize, bits: u64 },
    #[error("{n} qubits exceed the reconstruction cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("invalid gate: {0}")]
    InvalidGate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("out of memory: {what} exhausted")]
    OutOfMemory { what: &'static str },
    #[error("timeout")]
    Timeout,
    #[error("malformed task graph: {0}")]
    Graph(String),
}

/// Circuit text parse failure.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}
