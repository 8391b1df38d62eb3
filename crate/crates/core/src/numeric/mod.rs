//! Dense arithmetic, reverse-mode gradients and the Adam optimizer.
//!
//! Everything is `f64`: gradient checks at a `1e-4` relative tolerance are
//! not dependable in single precision.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod param;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_difference, grad_eval, max_relative_error, relative_error};
pub use matrix::{matmul, softmax_rows, CsrMatrix, DenseMatrix};
pub use param::{BoundParams, ParamId, ParamSet, ParamTensor};
pub use tape::{Gradients, Tape, Var};
