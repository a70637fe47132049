//! Dense numeric kernel: row-major matrices, a seeded generator, and a
//! reverse-mode tape for the encoder and loss gradients.

mod matrix;
mod rng;
mod tape;

pub use matrix::{pairwise_sum, softmax_rows, Matrix};
pub use rng::{gaussian_sample, Rng};
pub use tape::{Tape, Var};
