use log::warn;

use crate::conic::SolverConfig;
use crate::error::{Error, Result};
use crate::mmot::{grad_from_lp_dual, solve_exact_mmot, MarginalSet, PairwiseCost};
use crate::relax::{sdp_gradient, RelaxationOrder, RelaxationSolver};

/// Relaxation solves that stall within this factor of the solver tolerance
/// are still used; the SCF residual decides whether the run converged.
const INEXACT_FACTOR: f64 = 100.0;

/// Which approximation of the SCE functional to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    /// Exact transport over the joint measure.
    Lp,
    /// 2-marginal semidefinite relaxation.
    Sdp2,
    /// 3-marginal semidefinite relaxation.
    Sdp3,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Lp => "LP",
            Backend::Sdp2 => "SDP2",
            Backend::Sdp3 => "SDP3",
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LP" => Ok(Backend::Lp),
            "SDP2" => Ok(Backend::Sdp2),
            "SDP3" => Ok(Backend::Sdp3),
            other => Err(Error::InvalidArgument(format!("unknown backend '{other}'"))),
        }
    }
}

/// Value and gradient of the SCE functional at one density.
#[derive(Debug, Clone)]
pub struct SceEvaluation {
    pub value: f64,
    /// `v_sce = ∇_ρ E_sce`.
    pub gradient: Vec<f64>,
    /// Simplex pivots or splitting iterations spent.
    pub solver_iterations: usize,
}

/// Evaluates `E_sce[ρ]` and its gradient for a fixed pairwise cost, reusing
/// factorizations and warm starts across calls.
pub struct SceFunctional {
    backend: Backend,
    cost: PairwiseCost,
    relax: Option<RelaxationSolver>,
}

impl SceFunctional {
    pub fn new(backend: Backend, cost: PairwiseCost, solver: SolverConfig) -> Self {
        let relax = match backend {
            Backend::Lp => None,
            Backend::Sdp2 => Some(RelaxationSolver::new(RelaxationOrder::Two, solver.clone())),
            Backend::Sdp3 => Some(RelaxationSolver::new(RelaxationOrder::Three, solver.clone())),
        };
        let relax = relax.map(|r| r.with_inexact_tolerance(INEXACT_FACTOR * solver.tolerance));
        SceFunctional { backend, cost, relax }
    }

    /// Eliminate states with mass at most `tol` before the relaxation solve.
    /// Has no effect on the exact backend.
    pub fn with_support_tolerance(mut self, tol: f64) -> Self {
        self.relax = self.relax.map(|r| r.with_support_tolerance(tol));
        self
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn cost(&self) -> &PairwiseCost {
        &self.cost
    }

    pub fn evaluate(&mut self, rho: &[f64]) -> Result<SceEvaluation> {
        let m = MarginalSet::from_density(rho)?;
        match self.relax.as_mut() {
            None => {
                let r = solve_exact_mmot(&self.cost, &m)?;
                Ok(SceEvaluation { value: r.value, gradient: grad_from_lp_dual(&r)?, solver_iterations: r.iterations })
            }
            Some(solver) => {
                let r = solver.solve(&self.cost, &m)?;
                let gradient = if self.backend == Backend::Sdp2 {
                    match r.certificate.normalized(&self.cost, &m) {
                        Ok(cert) => sdp_gradient(&cert)?,
                        Err(e) => {
                            warn!("certificate normalization failed ({e}); using the raw multipliers");
                            r.gradient.clone().ok_or(Error::NonBinary)?
                        }
                    }
                } else {
                    r.gradient.clone().ok_or(Error::NonBinary)?
                };
                Ok(SceEvaluation { value: r.value, gradient, solver_iterations: r.iterations })
            }
        }
    }
}
