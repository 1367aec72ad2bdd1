//! Cell-mapping models of digital control systems with A/D-D/A quantization.
//!
//! A quantized digital control loop only ever observes which quantization
//! region the state is in, so its global dynamics are naturally described on
//! a finite partition of state space. This crate builds that partition, maps
//! closed loops onto it, and analyzes / synthesizes controllers at the cell
//! level:
//!
//! - [`quantization`] — saturating mid-tread quantizers and round-off
//!   arithmetic,
//! - [`cellspace`] — the uniform cell partition with a sink cell for
//!   out-of-range states,
//! - [`models`] — discrete LTI plants, ODE plants with an RK4 integrator,
//!   zero-order-hold discretization, a discrete Riccati LQR solver, and
//!   quantized closed loops,
//! - [`scm`] — simple cell mapping: one image cell per cell, unraveled into
//!   periodic groups and domains of attraction,
//! - [`gcm`] — generalized cell mapping: a sparse column-stochastic
//!   transition matrix with persistent/transient classification,
//! - [`reach`] — controllable-region computation by layered backward search
//!   over a controlled transition table,
//! - [`robust`] — parameter sweeps measured by modified-cell and
//!   controllable-cell counts,
//! - [`doc`] — discrete optimal control tables synthesized by
//!   label-correcting dynamic programming, with closed-loop playback,
//! - [`artifacts`] — bit-exact ROM images of control tables, the `DOC1`
//!   binary container, and CSV/PGM report writers.

pub mod artifacts;
pub mod cellspace;
pub mod doc;
pub mod gcm;
pub mod models;
pub mod quantization;
pub mod reach;
pub mod robust;
pub mod scm;

pub use cellspace::{AxisSpec, CellIndex, CellSpace};
pub use quantization::{QuantizerSpec, RoundingMode, VectorQuantizerSpec};

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by analysis and construction operations.
#[derive(Debug)]
pub enum Error {
    /// An input value was NaN or infinite where a finite value is required.
    NonFinite,
    /// A vector or matrix dimension did not match the expected one.
    DimensionMismatch { expected: usize, got: usize },
    /// A quantizer level outside the saturation range was dequantized.
    LevelOutOfRange { level: i64, saturation: i64 },
    /// A constructor argument violated a documented invariant.
    InvalidParameter(String),
    /// An index (cell, tuple component, group, control) was out of range.
    OutOfRange(String),
    /// The sink cell was used where a regular cell is required.
    SinkCell,
    /// A trajectory left the configured guard box or became non-finite.
    Divergence { step: usize },
    /// An iterative solver hit its iteration cap before converging.
    NoConvergence { iterations: usize },
    /// A transition-matrix column does not sum to one within tolerance.
    NotStochastic { source: usize, sum: f64 },
    /// The target cell set is empty.
    EmptyTarget,
    /// A ROM layout is inconsistent with the table it should serialize.
    Layout(String),
    /// A serialized artifact has the wrong magic, length, or field value.
    Format(String),
    /// An I/O error while reading or writing an artifact.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite => write!(f, "input value must be finite"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::LevelOutOfRange { level, saturation } => {
                write!(f, "level {level} outside saturation range [-{saturation}, {saturation}]")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::SinkCell => write!(f, "operation not defined on the sink cell"),
            Error::Divergence { step } => write!(f, "trajectory diverged at step {step}"),
            Error::NoConvergence { iterations } => {
                write!(f, "solver did not converge within {iterations} iterations")
            }
            Error::NotStochastic { source, sum } => {
                write!(f, "column {source} sums to {sum}, not 1")
            }
            Error::EmptyTarget => write!(f, "target cell set is empty"),
            Error::Layout(msg) => write!(f, "layout error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
