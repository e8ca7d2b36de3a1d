//! Dense f64 tensors with reverse-mode gradients.
//!
//! Everything trainable in the pipeline runs on this substrate: a row-major
//! [`Tensor`] value type, a [`Tape`] that records forward ops and replays
//! them in reverse, a named [`ParamSet`] store, a finite-difference
//! [`check_gradient`] harness, and a versioned binary checkpoint format.
//!
//! Design constraints baked in here:
//! - double precision only; gradient checks assume the headroom
//! - tensors are immutable once built and cheap to clone (`Arc` data)
//! - the tape is single-threaded (`RefCell` inside) and append-only, so
//!   reverse iteration over node ids is already a topological order

pub mod checkpoint;
mod fd_property;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradient, check_gradient_against, GradCheckReport, ParamGradReport};
pub use params::{Param, ParamSet};
pub use tape::{Gradients, Tape};
pub use tensor::Tensor;

/// Batch-norm epsilon used across the model stack.
pub const BN_EPS: f64 = 1e-5;
/// Momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op}: degenerate input: {details}")]
    DegenerateInput { op: &'static str, details: String },
    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
