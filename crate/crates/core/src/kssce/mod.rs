//! Kohn-Sham self-consistent field iteration with an SCE interaction functional.
//!
//! Each step evaluates `E_sce` and `v_sce = ∇E_sce` at the current density,
//! occupies the `N` lowest orbitals of `t + diag(w + v_sce)` and mixes the
//! resulting density into the next input.

mod eigen;
mod functional;
mod mixing;
mod scf;

pub use eigen::{effective_eigensolve, total_energy, Orbitals, DEGENERACY_TOL};
pub use functional::{Backend, SceEvaluation, SceFunctional};
pub use mixing::{mix, project_density, MixingScheme};
pub use scf::{scf_iterate, scf_iterate_traced, ScfConfig, ScfResult, ScfStep};
