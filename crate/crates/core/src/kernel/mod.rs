//! Dense matrix compute with reverse-mode differentiation.
//!
//! This is the only place gradients exist. Values are `f64` throughout and
//! every primitive rejects non-finite results, so a diverging run fails at the
//! first bad operation instead of silently producing NaN losses.

mod gradcheck;
mod param;
mod sparse;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{finite_difference_check, FdGroupReport, FdReport};
pub use param::{Param, ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{sigmoid, Gradients, SparseOp, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("backward called without a recorded tape")]
    NoTape,
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: (usize, usize) },
}
