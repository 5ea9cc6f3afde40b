//! Dense tensors with reverse-mode gradients for the operations the
//! recommender backbone uses.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Mask, Tape, Var};
pub use tensor::{dot, Tensor};
