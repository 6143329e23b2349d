//! Dense matrices, stable primitives, the differentiation tape and gradient
//! verification.

mod gradcheck;
mod matrix;
pub mod ops;
mod tape;

pub use gradcheck::{grad_check, relative_error, Entries, GradientReport};
pub use matrix::{Matrix, Scalar};
pub use ops::{kl_rows, l1_normalize, smooth, softmax_rows};
pub use tape::{Gradients, Tape, Var};
