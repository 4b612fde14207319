//! Crate-wide error type and result alias.
//!
//! Errors are grouped by how the CLI maps them to exit codes:
//! - input problems (parse/validation/geometry/io) → exit 2
//! - numerical failures (singular systems, residual blowup) → exit 1

use thiserror::Error;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A polygon with fewer than 3 distinct vertices or zero area.
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    /// An operation that needs geometry was handed an empty layer.
    #[error("no geometry on layer")]
    NoGeometry,

    /// A malformed input file; the message carries the location.
    #[error("{0}")]
    Parse(String),

    /// A structurally valid input that violates a semantic invariant.
    #[error("{0}")]
    Invalid(String),

    /// Linear-algebra failure: singular system, residual not met, etc.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI uses for this error: 1 for numerical
    /// failures, 2 for anything wrong with the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
