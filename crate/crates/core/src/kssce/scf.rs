use std::io::Write;

use log::{debug, info, warn};
use nalgebra::DMatrix;

use super::eigen::{effective_eigensolve, total_energy};
use super::functional::{Backend, SceFunctional};
use super::mixing::{mix, project_density, MixingScheme};
use crate::conic::SolverConfig;
use crate::error::{Error, Result};
use crate::mmot::cost_from_interaction;
use crate::model::HamiltonianSpec;

/// Settings for [`scf_iterate`].
#[derive(Debug, Clone)]
pub struct ScfConfig {
    pub backend: Backend,
    pub mixing: MixingScheme,
    /// Damping `α ∈ (0, 1]`.
    pub alpha: f64,
    /// Number of previous steps used by Anderson mixing.
    pub anderson_depth: usize,
    /// Stop once the self-consistency residual `‖ρ_out − ρ_in‖_∞` falls to this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Give up once this many steps pass without a new smallest residual
    /// (0 waits for `max_iterations`).
    pub stall_window: usize,
    /// Occupations are kept in `[clamp, 1 − clamp]`.
    pub clamp: f64,
    /// Settings for the relaxation backends.
    pub solver: SolverConfig,
}

impl Default for ScfConfig {
    fn default() -> Self {
        ScfConfig {
            backend: Backend::Lp,
            mixing: MixingScheme::Anderson,
            alpha: 0.3,
            anderson_depth: 5,
            tolerance: 1e-6,
            max_iterations: 500,
            stall_window: 50,
            clamp: 1e-6,
            solver: SolverConfig { tolerance: 1e-9, ..SolverConfig::default() },
        }
    }
}

impl ScfConfig {
    pub fn with_backend(backend: Backend) -> Self {
        ScfConfig { backend, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("SCF tolerance {} must be positive", self.tolerance)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("mixing parameter {} outside (0, 1]", self.alpha)));
        }
        if self.anderson_depth == 0 {
            return Err(Error::InvalidArgument("Anderson depth must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.clamp) {
            return Err(Error::InvalidArgument(format!("clamp {} outside [0, 0.5)", self.clamp)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("at least one SCF iteration is required".into()));
        }
        Ok(())
    }
}

/// One line of the iteration history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScfStep {
    pub iteration: usize,
    /// `‖ρ_out − ρ_in‖_∞`.
    pub residual: f64,
    /// `‖ρ_next − ρ_in‖_∞` after mixing (0 on the accepted step).
    pub density_change: f64,
    pub e_sce: f64,
    pub total_energy: f64,
}

/// Final (or best) iterate of an SCF run.
#[derive(Debug, Clone)]
pub struct ScfResult {
    pub converged: bool,
    /// Density updates performed before the accepted step.
    pub iterations: usize,
    /// Input density of the accepted step; `e_sce` and `v_sce` are evaluated here.
    pub density: Vec<f64>,
    /// `diag(ΦΦᵀ)` of the accepted orbitals.
    pub output_density: Vec<f64>,
    /// `‖output_density − density‖_∞`.
    pub residual: f64,
    pub orbital_energies: Vec<f64>,
    /// `L × N` occupied orbitals.
    pub orbitals: DMatrix<f64>,
    pub v_sce: Vec<f64>,
    pub e_sce: f64,
    /// `Σ ε_k − v_sceᵀ ρ + E_sce`.
    pub total_energy: f64,
    pub homo_lumo_gap: Option<f64>,
    /// Backend solver iterations summed over all steps.
    pub solver_iterations: usize,
    pub trace: Vec<ScfStep>,
}

/// Run the self-consistent field loop for `n` particles.
///
/// Without convergence (iteration cap reached, `stall_window` steps without
/// progress, or a later functional evaluation failing to converge) the step with the smallest residual is
/// returned with `converged == false`.
pub fn scf_iterate(h: &HamiltonianSpec, n: usize, cfg: &ScfConfig) -> Result<ScfResult> {
    scf_iterate_traced(h, n, cfg, None)
}

/// As [`scf_iterate`], writing `iteration,residual,density_change,e_sce,total_energy`
/// lines to `trace`.
pub fn scf_iterate_traced(
    h: &HamiltonianSpec,
    n: usize,
    cfg: &ScfConfig,
    mut trace: Option<&mut dyn Write>,
) -> Result<ScfResult> {
    cfg.validate()?;
    let l = h.num_sites();
    if n == 0 || n >= l {
        return Err(Error::ParticleNumber { n, sites: l });
    }
    let cost = cost_from_interaction(h.interaction())?;
    // densities at the clamp are boundary points as far as the relaxations are concerned
    let mut functional =
        SceFunctional::new(cfg.backend, cost, cfg.solver.clone()).with_support_tolerance(2.0 * cfg.clamp);
    let w: Vec<f64> = h.onsite().iter().copied().collect();
    let nf = n as f64;
    let io = |e: std::io::Error| Error::Numerical(format!("trace write failed: {e}"));
    if let Some(t) = trace.as_deref_mut() {
        writeln!(t, "iteration,residual,density_change,e_sce,total_energy").map_err(io)?;
    }

    let mut rho = project_density(&vec![nf / l as f64; l], nf, cfg.clamp)?;
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut steps = Vec::new();
    let mut solver_iterations = 0;
    let mut best: Option<ScfResult> = None;
    let mut best_residual = f64::INFINITY;
    let mut best_step = 0;

    for k in 0..cfg.max_iterations {
        let eval = match functional.evaluate(&rho) {
            Ok(eval) => eval,
            Err(e @ Error::NotConverged { .. }) if best.is_some() => {
                warn!("SCF {} stopped at step {k}: {e}", cfg.backend);
                break;
            }
            Err(e) => return Err(e),
        };
        solver_iterations += eval.solver_iterations;
        let orb = effective_eigensolve(h.hopping(), &w, &eval.gradient, n)?;
        if orb.is_degenerate() {
            return Err(Error::DegenerateHomo {
                gap: orb.homo_lumo_gap.unwrap_or(0.0),
                homo: orb.energies[n - 1],
                lumo: orb.energies[n - 1] + orb.homo_lumo_gap.unwrap_or(0.0),
            });
        }
        let residual = max_abs_diff(&rho, &orb.density);
        let energy = total_energy(&orb.energies, &eval.gradient, &rho, eval.value);
        let next = if residual <= cfg.tolerance {
            None
        } else {
            history.push((rho.clone(), orb.density.clone()));
            if history.len() > cfg.anderson_depth + 1 {
                history.remove(0);
            }
            Some(mix(&history, cfg.mixing, cfg.alpha, cfg.anderson_depth, nf, cfg.clamp)?)
        };
        let change = next.as_ref().map_or(0.0, |x| max_abs_diff(x, &rho));
        let step = ScfStep { iteration: k, residual, density_change: change, e_sce: eval.value, total_energy: energy };
        debug!("SCF {} step {k}: residual {residual:.3e}, update {change:.3e}, E = {energy:.10}", cfg.backend);
        if let Some(t) = trace.as_deref_mut() {
            writeln!(t, "{k},{residual:e},{change:e},{:.12},{energy:.12}", eval.value).map_err(io)?;
        }
        steps.push(step);
        let converged = residual <= cfg.tolerance;
        if converged || residual < best_residual {
            best_residual = residual;
            best_step = k;
            best = Some(ScfResult {
                converged,
                iterations: k,
                density: rho.clone(),
                output_density: orb.density.clone(),
                residual,
                orbital_energies: orb.energies.clone(),
                orbitals: orb.orbitals.clone(),
                v_sce: eval.gradient.clone(),
                e_sce: eval.value,
                total_energy: energy,
                homo_lumo_gap: orb.homo_lumo_gap,
                solver_iterations: 0,
                trace: Vec::new(),
            });
        }
        if cfg.stall_window > 0 && k - best_step >= cfg.stall_window {
            warn!("SCF {} stalled: no progress since step {best_step}", cfg.backend);
            break;
        }
        match next {
            Some(x) if !converged => rho = x,
            _ => break,
        }
    }

    let mut result = best.expect("at least one iteration ran");
    let steps_taken = steps.len();
    result.trace = steps;
    result.solver_iterations = solver_iterations;
    if result.converged {
        info!("SCF {} converged after {} updates, E = {:.10}", cfg.backend, result.iterations, result.total_energy);
    } else {
        warn!(
            "SCF {} did not converge in {} steps; returning the step with residual {best_residual:.3e}",
            cfg.backend,
            steps_taken
        );
    }
    Ok(result)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
