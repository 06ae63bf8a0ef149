//! Dense tensors with reverse-mode automatic differentiation.

mod check;
mod tape;
mod tensor;

pub use check::{finite_difference_check, finite_difference_errors};
pub use tape::{Indices, Tape, Var};
pub use tensor::Tensor;
