//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every forward op together with the values it needs
//! for the backward pass. Leaves are either parameters (gradients tracked)
//! or constants. [`Graph::backward`] accumulates gradients from a scalar
//! loss back to every parameter leaf.
//!
//! Broadcasting is limited to the leading-batch form: the right operand
//! of an elementwise op may match a trailing suffix of the left operand's
//! shape, and is then repeated over the leading dimensions.

mod conv;
mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{gradcheck, relative_error, GradcheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Scalar type of a tensor: `f32` for training, `f64` for verification.
pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
