//! Dense-tensor reverse-mode differentiation.
//!
//! Values live on a [`Tape`] and are addressed through [`Var`] handles.
//! Elementwise ops broadcast only over leading axes: the smaller operand's
//! shape must be a trailing suffix of the larger one's.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
