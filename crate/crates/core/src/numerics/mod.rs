//! Dense matrices, parameter storage, reverse-mode differentiation and
//! gradient checking.

pub mod checkpoint;
pub mod counters;
pub mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_floor, round_off_floor, GradCheckReport};
pub use params::{Gradients, Param, ParamStore};
pub use tape::{SoftmaxRow, Tape, Var};
pub use tensor::Tensor;

/// Floating-point type for every kernel and parameter.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
