//! Experiment runner comparing exact diagonalization with Kohn-Sham SCE
//! energies on lattice models. A TOML config describes a model grid and the
//! methods to run; results go to `results.csv` and `summary.json`.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, GridPoint, Method};
pub use run::{execute, read_table, write_outputs, FailurePolicy, Outcome, ResultRow, COLUMNS};
