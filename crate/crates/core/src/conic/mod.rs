//! Linear-objective conic programs over products of free, nonnegative and
//! positive-semidefinite cones, with an operator-splitting solver and an exact
//! simplex method for the purely polyhedral case.
//!
//! Problems have the standard form
//!
//! ```text
//! minimize cᵀx  subject to  A x = b,  x ∈ K
//! ```
//!
//! with dual `maximize bᵀy subject to c − Aᵀy = s ∈ K*`.

mod accel;
mod admm;
pub(crate) mod ldl;
mod psd;
pub mod simplex;

use std::ops::Range;

pub use admm::{ConicSolver, WarmStart};
pub use psd::{min_eigenvalue, project_psd, smat, svec, svec_index, svec_len};

use crate::error::{Error, Result};

/// One block of the variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// Unconstrained coordinates.
    Free(usize),
    /// Coordinates constrained to be nonnegative.
    NonNegative(usize),
    /// A symmetric matrix of the given side length stored in scaled form.
    Psd(usize),
}

impl Cone {
    /// Number of scalar coordinates occupied by the block.
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Free(n) | Cone::NonNegative(n) => n,
            Cone::Psd(n) => svec_len(n),
        }
    }
}

/// Location of a PSD block inside the variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsdBlock {
    pub offset: usize,
    pub side: usize,
}

impl PsdBlock {
    /// Coordinate holding entry `(i, j)` and the factor `f` with `M[i,j] = f·x[coord]`.
    pub fn entry(&self, i: usize, j: usize) -> (usize, f64) {
        let (k, f) = svec_index(self.side, i, j);
        (self.offset + k, f)
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + svec_len(self.side)
    }
}

/// A conic program `min cᵀx, Ax = b, x ∈ K` with `A` stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    objective: Vec<f64>,
    cones: Vec<Cone>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
}

/// Incremental construction of a [`ConicProblem`].
#[derive(Debug, Clone, Default)]
pub struct ProblemBuilder {
    objective: Vec<f64>,
    cones: Vec<Cone>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        ProblemBuilder { row_ptr: vec![0], ..Default::default() }
    }

    fn push_cone(&mut self, cone: Cone) -> usize {
        let start = self.objective.len();
        self.objective.resize(start + cone.dim(), 0.0);
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Free(a)), Cone::Free(b)) => *a += b,
            (Some(Cone::NonNegative(a)), Cone::NonNegative(b)) => *a += b,
            _ => self.cones.push(cone),
        }
        start
    }

    /// Append `n` free variables.
    pub fn free(&mut self, n: usize) -> Range<usize> {
        let s = self.push_cone(Cone::Free(n));
        s..s + n
    }

    /// Append `n` nonnegative variables.
    pub fn nonneg(&mut self, n: usize) -> Range<usize> {
        let s = self.push_cone(Cone::NonNegative(n));
        s..s + n
    }

    /// Append a PSD matrix variable of the given side length.
    pub fn psd(&mut self, side: usize) -> PsdBlock {
        let offset = self.push_cone(Cone::Psd(side));
        PsdBlock { offset, side }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Add `coef` to the objective coefficient of variable `var`.
    pub fn add_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] += coef;
    }

    /// Add the constraint `Σ coef·x[var] = rhs`; repeated variables are summed.
    /// Returns the row index.
    pub fn add_row(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let mut t: Vec<(usize, f64)> = terms.to_vec();
        t.sort_unstable_by_key(|&(c, _)| c);
        let start = self.cols.len();
        for (c, v) in t {
            if self.cols.len() > start && *self.cols.last().unwrap() == c {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.rhs.push(rhs);
        self.rhs.len() - 1
    }

    pub fn build(self) -> Result<ConicProblem> {
        let n = self.objective.len();
        if let Some(&c) = self.cols.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidArgument(format!(
                "constraint references variable {c} but only {n} exist"
            )));
        }
        if self.objective.iter().chain(&self.vals).chain(&self.rhs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite problem data".into()));
        }
        Ok(ConicProblem {
            objective: self.objective,
            cones: self.cones,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
            rhs: self.rhs,
        })
    }
}

impl ConicProblem {
    pub fn builder() -> ProblemBuilder {
        ProblemBuilder::new()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    /// Replace the right-hand side, keeping the constraint matrix.
    pub fn set_rhs(&mut self, rhs: Vec<f64>) -> Result<()> {
        if rhs.len() != self.rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "rhs of length {} for {} rows",
                rhs.len(),
                self.rhs.len()
            )));
        }
        self.rhs = rhs;
        Ok(())
    }

    /// Replace the objective vector, keeping the constraints.
    pub fn set_objective(&mut self, c: Vec<f64>) -> Result<()> {
        if c.len() != self.objective.len() {
            return Err(Error::DimensionMismatch(format!(
                "objective of length {} for {} variables",
                c.len(),
                self.objective.len()
            )));
        }
        self.objective = c;
        Ok(())
    }

    /// Nonzeros of row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub(crate) fn same_matrix(&self, other: &ConicProblem) -> bool {
        self.cones == other.cones
            && self.row_ptr == other.row_ptr
            && self.cols == other.cols
            && self.vals == other.vals
    }

    /// `A x`.
    pub fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_rows()).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `Aᵀ y`.
    pub fn at_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_vars()];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (c, v) in self.row(i) {
                    out[c] += v * yi;
                }
            }
        }
        out
    }

    /// Euclidean projection onto the primal cone `K`.
    pub fn project_primal(&self, x: &mut [f64]) {
        let mut off = 0;
        for cone in &self.cones {
            let d = cone.dim();
            let block = &mut x[off..off + d];
            match *cone {
                Cone::Free(_) => {}
                Cone::NonNegative(_) => block.iter_mut().for_each(|v| *v = v.max(0.0)),
                Cone::Psd(n) => psd::project_svec_in_place(block, n),
            }
            off += d;
        }
    }

    /// Euclidean projection onto the dual cone `K*` (free coordinates map to zero).
    pub fn project_dual(&self, s: &mut [f64]) {
        let mut off = 0;
        for cone in &self.cones {
            let d = cone.dim();
            if let Cone::Free(_) = cone {
                s[off..off + d].iter_mut().for_each(|v| *v = 0.0);
            }
            off += d;
        }
        self.project_primal_nonfree(s);
    }

    fn project_primal_nonfree(&self, x: &mut [f64]) {
        let mut off = 0;
        for cone in &self.cones {
            let d = cone.dim();
            let block = &mut x[off..off + d];
            match *cone {
                Cone::NonNegative(_) => block.iter_mut().for_each(|v| *v = v.max(0.0)),
                Cone::Psd(n) => psd::project_svec_in_place(block, n),
                Cone::Free(_) => {}
            }
            off += d;
        }
    }

    /// Relative residuals of a candidate primal-dual triple.
    pub fn residuals(&self, x: &[f64], y: &[f64], s: &[f64]) -> Result<Residuals> {
        if x.len() != self.num_vars() || s.len() != self.num_vars() || y.len() != self.num_rows() {
            return Err(Error::DimensionMismatch(format!(
                "candidate sizes x={}, y={}, s={} for a problem with {} variables and {} rows",
                x.len(),
                y.len(),
                s.len(),
                self.num_vars(),
                self.num_rows()
            )));
        }
        let ax = self.a_mul(x);
        let aty = self.at_mul(y);
        let primal = norm2(ax.iter().zip(&self.rhs).map(|(a, b)| a - b)) / (1.0 + norm(&self.rhs));
        let dual = norm2((0..self.num_vars()).map(|k| self.objective[k] - aty[k] - s[k]))
            / (1.0 + norm(&self.objective));
        let pobj = dot(&self.objective, x);
        let dobj = dot(&self.rhs, y);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        Ok(Residuals { primal, dual, gap })
    }
}

/// Relative primal infeasibility, dual stationarity and duality gap.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

/// Outcome of a conic solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    InfeasibleDetected,
}

/// Options for the splitting solver.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Target for all three relative residuals.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial penalty parameter.
    pub penalty: f64,
    /// Rebalance the penalty when primal and dual residuals drift apart.
    pub adaptive_penalty: bool,
    /// Over-relaxation factor in `(0, 2)`.
    pub relaxation: f64,
    /// Iterations in a row that must satisfy the tolerance before stopping.
    pub consecutive: usize,
    /// Emit a trace line every this many iterations (0 disables).
    pub trace_interval: usize,
    /// Number of past iterates used for Anderson acceleration (0 disables).
    pub acceleration_memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-7,
            max_iterations: 200_000,
            penalty: 1.0,
            adaptive_penalty: true,
            relaxation: 1.6,
            consecutive: 10,
            trace_interval: 0,
            acceleration_memory: 0,
        }
    }
}

/// Primal and dual iterates returned by the solver.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

/// Solve with default workspace and no warm start.
pub fn solve(problem: &ConicProblem, config: &SolverConfig) -> Result<ConicSolution> {
    ConicSolver::new(problem)?.solve(problem, config, None, None)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm2(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}
