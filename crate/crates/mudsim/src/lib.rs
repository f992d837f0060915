//! Iterative multiuser detection for overloaded random-spreading channels.
//!
//! The system under study has `K` synchronous users sharing `L` chips per
//! channel use through random antipodal spreading, with `K` allowed to exceed
//! `L`. In that overloaded regime the user Gram matrix is singular and the
//! classic tree/trellis detectors cannot be applied directly. The receiver
//! implemented here restores a searchable structure by loading the Gram
//! diagonal with a constant `ρ`, factoring the result into a lower-triangular
//! matrix, and running a breadth-first T-algorithm over the resulting symbol
//! tree. The surviving leaf list is marginalized into per-user symbol
//! posteriors, exchanged with per-user convolutional (BCJR) decoders, and
//! iterated.
//!
//! Module map:
//!
//! * [`model`] — constellations, spreading, noise calibration, encoding and
//!   channel simulation.
//! * [`gram`] — diagonal loading, triangular factorization and the matched
//!   filter front end.
//! * [`search`] — T-algorithm / M-algorithm breadth-first list detection.
//! * [`marginal`] — list-to-posterior conversion and extrinsic bookkeeping.
//! * [`fec`] — convolutional code, interleavers and exact BCJR decoding.
//! * [`baselines`] — soft interference cancellation and LMMSE detectors.
//! * [`oracle`] — brute-force posterior references used for validation.
//! * [`harness`] — frame loop, Monte-Carlo driver and report emission.
//!
//! Every random draw derives from a master seed through [`rng::derive_stream`],
//! so any simulation is reproducible bit-for-bit regardless of how frames are
//! scheduled across worker threads.

use std::fmt;

pub mod baselines;
pub mod fec;
pub mod gram;
pub mod harness;
pub mod linalg;
pub mod marginal;
pub(crate) mod math;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod search;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// A scalar argument was outside its allowed range.
    InvalidParameter(String),
    /// Two containers that must agree in length did not.
    LengthMismatch(String),
    /// Matrix/vector shapes are inconsistent.
    DimensionMismatch(String),
    /// A constellation violates the requirements of an operation
    /// (for example a zero-magnitude symbol, which makes the diagonal
    /// loading rule undefined).
    DegenerateConstellation(String),
    /// The loaded Gram matrix was not positive-definite, i.e. the loading
    /// constant violated its admissibility bound (or the input was
    /// numerically marginal). Reports the offending column and pivot.
    FactorizationFailure { column: usize, pivot: f64 },
    /// An exhaustive enumeration would exceed the configured cap.
    CapExceeded { required: u128, cap: u64 },
    /// Reading or writing a file failed.
    Io(std::io::Error),
    /// (De)serializing JSON failed.
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::LengthMismatch(msg) => write!(f, "length mismatch: {msg}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::DegenerateConstellation(msg) => write!(f, "degenerate constellation: {msg}"),
            Error::FactorizationFailure { column, pivot } => write!(
                f,
                "factorization failure: nonpositive pivot {pivot:e} at column {column} \
                 (loading constant too small or input numerically marginal)"
            ),
            Error::CapExceeded { required, cap } => write!(
                f,
                "enumeration cap exceeded: {required} sequences requested, cap is {cap}"
            ),
            Error::Io(e) => write!(f, "i/o failure: {e}"),
            Error::Json(e) => write!(f, "json failure: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
