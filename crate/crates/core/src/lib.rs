//! Strictly-correlated-electron functionals for lattice models via multi-marginal
//! optimal transport and its semidefinite relaxations.

pub mod conic;
pub mod error;
pub mod kssce;
pub mod mmot;
pub mod model;
pub mod relax;

pub use error::{Error, Result};
