//! Dense and sparse matrices, a recording tape for reverse-mode
//! differentiation, and the Adam optimizer.
//!
//! Everything is `f64` and single-threaded with fixed summation order,
//! which is what makes the rest of the crate bit-reproducible.

mod adam;
pub mod gradcheck;
mod sparse;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, KL_EPSILON, PROB_ROW_TOLERANCE};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;
