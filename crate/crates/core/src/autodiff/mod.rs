//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records scalar operations performed on [`Var`] handles and
//! propagates adjoints backwards. Simulation code is written once against the
//! [`Real`] trait and runs either on plain `f64` or on taped `Var`s with
//! bit-identical values.
//!
//! Hot kernels avoid per-operation nodes in two ways:
//! - [`Kernel`]: a small scalar function evaluated on a scratch tape whose
//!   Jacobian is collapsed into one node per output;
//! - [`BlockOp`]: a multi-output operation with a hand-written
//!   vector-Jacobian product (used for elastic forces).

mod ops;
mod real;
mod tape;

pub use ops::Op;
pub use real::{det3, dot, inv3, BlockOp, Kernel, Real};
pub use tape::{BlockVjp, Gradients, Tape, Var};

/// Errors raised by tape recording and the backward pass.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("domain error in {op}: argument {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("tape usage error: {0}")]
    Usage(String),
}
