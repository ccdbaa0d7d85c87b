//! Graph posterior networks with linear-opinion-pool propagation.
//!
//! Sparse propagation operators, Dirichlet and Dirichlet-mixture uncertainty
//! measures, the GPN and LOP-GPN node classifiers with an APPNP baseline,
//! synthetic graph datasets and the evaluation protocols built on them.

pub mod datasets;
pub mod diffmath;
mod error;
pub mod eval;
pub mod experiment;
pub mod models;
pub mod propagation;
pub mod selfcheck;
pub mod second_order;
pub mod sparse;

pub use error::{Error, Result};
