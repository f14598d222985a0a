//! Error taxonomy shared by the library and the command-line tool.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across design, estimation and planning.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed configuration: bad distribution parameters, empty subsets
    /// referencing missing coordinates, invalid confidence levels, bad CLI
    /// flag combinations.
    #[error("configuration: {0}")]
    Config(String),

    /// Structurally valid input outside the mathematical domain of an
    /// operation (non positive-definite matrix, out-of-range argument).
    #[error("domain: {0}")]
    Domain(String),

    /// Truncation schedule outside the admissible exponent range.
    #[error("schedule: theta must lie in (1/(2*delta), 1/2), got theta={theta}, delta={delta}")]
    Schedule { theta: f64, delta: f64 },

    /// Output variance too small to normalize: the index is undefined.
    #[error("degenerate output: pooled trace {trace:.3e} is below the tolerance {tol:.3e}")]
    Degenerate { trace: f64, tol: f64 },

    /// Eigenvalue gap below tolerance, so no canonical eigenbasis exists.
    #[error("spectrum not simple: adjacent eigenvalue gap {gap:.3e} below tolerance {tol:.3e}")]
    NonSimpleSpectrum { gap: f64, tol: f64 },

    /// Exact signed-permutation enumeration grows as 2^k k! and is capped.
    #[error("capacity: output dimension {k} exceeds the exact enumeration cap {cap}")]
    Capacity { k: usize, cap: usize },

    /// Operation not defined for this model/case combination.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An output row violates the boundedness assumption behind the
    /// concentration bounds.
    #[error("row {row}: output norm {norm:.6} is not strictly below rho = {rho:.6}")]
    InvalidRho { row: usize, norm: f64, rho: f64 },

    /// No sample size up to the search cap satisfies the requested risk.
    #[error("no sample size up to {cap} meets the requested deviation risk")]
    Unattainable { cap: u64 },

    /// External model subprocess failed or produced unreadable output.
    #[error("external model, row {row}: {msg}")]
    External { row: usize, msg: String },

    /// Filesystem or pipe failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool: 2 for configuration
    /// problems, 3 for degenerate data, 4 for external model failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Domain(_)
            | Error::Schedule { .. }
            | Error::Capacity { .. }
            | Error::Unsupported(_) => 2,
            Error::Degenerate { .. }
            | Error::NonSimpleSpectrum { .. }
            | Error::InvalidRho { .. }
            | Error::Unattainable { .. } => 3,
            Error::External { .. } | Error::Io(_) => 4,
        }
    }
}
