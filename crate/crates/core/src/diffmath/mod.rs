//! Special functions, reverse-mode differentiation and optimisation.

mod adam;
pub mod gradcheck;
pub mod special;
mod tape;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use tape::{SparseOperator, Tape, Tensor, Var};

#[cfg(test)]
pub(crate) use tape::DIGAMMA_GRAD_PERTURBATION;
