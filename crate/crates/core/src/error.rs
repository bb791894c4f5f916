use thiserror::Error;

/// Errors produced by matrix generation, kernels, and the solver driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("problem too large: {0} rows exceed the 32-bit index space")]
    IndexOverflow(u128),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("starting vector has zero norm (column {0})")]
    ZeroNorm(usize),
    #[error("moment imaginary residue {residue:e} exceeds tolerance at index {index}")]
    ImaginaryResidue { index: usize, residue: f64 },
    #[error("matrix market parse error at line {line}: {msg}")]
    MtxParse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
