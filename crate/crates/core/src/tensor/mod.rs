//! Dense tensors and a small reverse-mode differentiation engine.

mod dense;
mod gradcheck;
mod params;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_subset, GradCheckReport, GRAD_CHECK_FLOOR};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{BatchNormState, Mode, Tape, Var};

pub(crate) use tape::chebyshev_blocks;
