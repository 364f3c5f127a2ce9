//! Operator-splitting solver for [`ConicProblem`].
//!
//! Each iteration projects onto the affine set `{x : Ax = b}` (via a cached
//! sparse factorization of the regularized KKT matrix) and then onto the cone.
//! The affine projection does not depend on the penalty parameter, so the
//! penalty can be rebalanced freely without refactoring.

use std::io::Write;

use log::debug;

use super::accel::Anderson;
use super::ldl::SparseLdl;
use super::{dot, norm, Cone, ConicProblem, PsdBlock, ConicSolution, Residuals, SolveStatus, SolverConfig};
use crate::error::{Error, Result};

const KKT_REG: f64 = 1e-9;
const PENALTY_RANGE: (f64, f64) = (1e-6, 1e8);
const ADAPT_EVERY: usize = 25;
/// Smallest factor by which the penalty is ever changed.
const PENALTY_STEP: f64 = 5.0;

/// Starting point for a solve, typically the result of a nearby problem.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub penalty: Option<f64>,
}

impl WarmStart {
    pub fn from_solution(sol: &ConicSolution, penalty: f64) -> Self {
        WarmStart { x: sol.x.clone(), s: sol.s.clone(), penalty: Some(penalty) }
    }
}

/// Factorized workspace for repeated solves sharing one constraint matrix.
#[derive(Debug, Clone)]
pub struct ConicSolver {
    template: ConicProblem,
    /// Constraint matrix with the variable scaling applied to its columns.
    scaled: ConicProblem,
    /// Variable scaling `x = e ∘ x'`.
    e: Vec<f64>,
    /// Row equilibration of the scaled matrix.
    scale: Vec<f64>,
    kkt: SparseLdl,
    penalty: f64,
}

impl ConicSolver {
    pub fn new(problem: &ConicProblem) -> Result<Self> {
        ConicSolver::with_scaling(problem, vec![1.0; problem.num_vars()])
    }

    /// Workspace that iterates on `x' = x / e`. Inside each PSD block the
    /// scaling must be a congruence, `e(i, j) = d_i d_j` for some positive `d`,
    /// so that the cone is mapped onto itself.
    pub fn with_scaling(problem: &ConicProblem, e: Vec<f64>) -> Result<Self> {
        let nx = problem.num_vars();
        let m = problem.num_rows();
        check_scaling(problem, &e)?;
        let template = problem.clone();
        let mut scaled = problem.clone();
        for (v, &c) in scaled.vals.iter_mut().zip(&scaled.cols) {
            *v *= e[c];
        }
        let problem = &scaled;
        let scale: Vec<f64> = (0..m)
            .map(|i| {
                let r = problem.row(i).map(|(_, v)| v * v).sum::<f64>().sqrt();
                if r > 0.0 {
                    1.0 / r
                } else {
                    1.0
                }
            })
            .collect();
        let mut entries = Vec::with_capacity(nx + m + problem.cols.len());
        entries.extend((0..nx).map(|k| (k, k, 1.0)));
        for (i, &d) in scale.iter().enumerate() {
            entries.push((nx + i, nx + i, -KKT_REG));
            entries.extend(problem.row(i).map(|(c, v)| (nx + i, c, d * v)));
        }
        let mut signs = vec![1.0; nx];
        signs.resize(nx + m, -1.0);
        let kkt = SparseLdl::factor(nx + m, &entries, &signs, KKT_REG * 1e-3)?;
        debug!(
            "kkt factor: dim {}, nnz(L) {}, regularized pivots {}",
            kkt.dim(),
            kkt.factor_nnz(),
            kkt.regularized_pivots()
        );
        Ok(ConicSolver { template, scaled, e, scale, kkt, penalty: 1.0 })
    }

    /// Variable scaling used by this workspace.
    pub fn scaling(&self) -> &[f64] {
        &self.e
    }

    /// Penalty parameter reached at the end of the last solve.
    pub fn last_penalty(&self) -> f64 {
        self.penalty
    }

    /// Solve `problem`, which must share the constraint matrix and cones used to
    /// build this workspace (objective and right-hand side may differ).
    pub fn solve(
        &mut self,
        problem: &ConicProblem,
        config: &SolverConfig,
        warm: Option<&WarmStart>,
        mut trace: Option<&mut dyn Write>,
    ) -> Result<ConicSolution> {
        if !self.template.same_matrix(problem) {
            return Err(Error::InvalidArgument(
                "problem does not match the factorized constraint matrix".into(),
            ));
        }
        if !(config.relaxation > 0.0 && config.relaxation < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "relaxation {} outside (0, 2)",
                config.relaxation
            )));
        }
        let nx = problem.num_vars();
        let m = problem.num_rows();
        let c = problem.objective();
        let b = problem.rhs();
        let bs: Vec<f64> = b.iter().zip(&self.scale).map(|(v, d)| v * d).collect();
        let (bnorm, cnorm) = (norm(b), norm(c));
        let e = self.e.clone();
        let cs: Vec<f64> = c.iter().zip(&e).map(|(c, e)| c * e).collect();
        self.scaled.objective.copy_from_slice(&cs);
        self.scaled.rhs.copy_from_slice(b);

        let mut z = vec![0.0; nx];
        let mut lam = vec![0.0; nx];
        let mut sigma = config.penalty;
        if let Some(w) = warm {
            if w.x.len() != nx || w.s.len() != nx {
                return Err(Error::DimensionMismatch("warm start has wrong length".into()));
            }
            z.copy_from_slice(&w.x);
            problem.project_primal(&mut z);
            z.iter_mut().zip(&e).for_each(|(z, e)| *z /= e);
            let mut s = w.s.clone();
            problem.project_dual(&mut s);
            lam.iter_mut().zip(s.iter().zip(&e)).for_each(|(l, (s, e))| *l = -s * e);
            if let Some(p) = w.penalty {
                sigma = p;
            }
        }
        sigma = sigma.clamp(PENALTY_RANGE.0, PENALTY_RANGE.1);

        if let Some(t) = trace.as_deref_mut() {
            writeln!(t, "iteration,primal,dual,gap,objective,penalty")
                .map_err(|e| Error::Numerical(format!("trace write failed: {e}")))?;
        }

        let alpha = config.relaxation;
        let mut rhs = vec![0.0; nx + m];
        let mut work = Vec::with_capacity(nx + m);
        let mut y = vec![0.0; m];
        let mut prev_y = vec![0.0; m];
        let mut prev_z = vec![0.0; nx];
        let mut u = vec![0.0; nx];
        let mut xo = vec![0.0; nx];
        let mut lo = vec![0.0; nx];
        let mut streak = 0;
        let mut adapt_window = ADAPT_EVERY;
        let mut next_adapt = ADAPT_EVERY;
        let mut suspicion = 0;
        let mut res = Residuals::default();
        let mut status = SolveStatus::MaxIterations;
        let mut iterations = 0;
        let mut accel = Anderson::new(config.acceleration_memory);
        let accelerate = config.acceleration_memory > 0;
        let mut w_in = vec![0.0; 2 * nx];
        let mut w_out = vec![0.0; 2 * nx];
        // plain step and its fixed-point residual from before the last extrapolation
        let mut fallback: Option<(Vec<f64>, f64)> = None;

        for it in 1..=config.max_iterations {
            iterations = it;
            if accelerate {
                w_in[..nx].copy_from_slice(&z);
                w_in[nx..].iter_mut().zip(&lam).for_each(|(a, l)| *a = l / sigma);
            }
            for k in 0..nx {
                rhs[k] = z[k] - (cs[k] + lam[k]) / sigma;
            }
            rhs[nx..].copy_from_slice(&bs);
            self.project_affine(&mut rhs, &mut work);
            let (xt, w) = rhs.split_at(nx);
            prev_z.copy_from_slice(&z);
            for k in 0..nx {
                let xh = alpha * xt[k] + (1.0 - alpha) * z[k];
                u[k] = xh + lam[k] / sigma;
            }
            z.copy_from_slice(&u);
            problem.project_primal(&mut z);
            for k in 0..nx {
                lam[k] = sigma * (u[k] - z[k]);
            }
            prev_y.copy_from_slice(&y);
            for i in 0..m {
                y[i] = -sigma * w[i] * self.scale[i];
            }

            let mut gnorm = 0.0;
            if accelerate {
                w_out[..nx].copy_from_slice(&z);
                w_out[nx..].iter_mut().zip(&lam).for_each(|(a, l)| *a = l / sigma);
                gnorm = w_out.iter().zip(&w_in).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if let Some((plain, base)) = fallback.take() {
                    if gnorm > base {
                        // the extrapolated point did worse than the plain step it replaced
                        accel.reset();
                        z.copy_from_slice(&plain[..nx]);
                        lam.iter_mut().zip(&plain[nx..]).for_each(|(l, v)| *l = v * sigma);
                        continue;
                    }
                }
            }

            for k in 0..nx {
                xo[k] = e[k] * z[k];
                lo[k] = lam[k] / e[k];
            }
            res = residuals_with_s_neg(problem, &xo, &y, &lo, bnorm, cnorm);
            if !res.max().is_finite() {
                return Err(Error::Numerical(format!("solver diverged at iteration {it}")));
            }
            if config.trace_interval > 0 && it % config.trace_interval == 0 {
                if let Some(t) = trace.as_deref_mut() {
                    writeln!(
                        t,
                        "{it},{:.6e},{:.6e},{:.6e},{:.12e},{:.3e}",
                        res.primal,
                        res.dual,
                        res.gap,
                        dot(&cs, &z),
                        sigma
                    )
                    .map_err(|e| Error::Numerical(format!("trace write failed: {e}")))?;
                }
            }
            if res.max() <= config.tolerance {
                streak += 1;
                if streak >= config.consecutive.max(1) {
                    status = SolveStatus::Converged;
                    break;
                }
            } else {
                streak = 0;
            }

            if it % ADAPT_EVERY == 0 {
                if certifies_infeasibility(&self.scaled, &y, &prev_y, &z, &prev_z) {
                    suspicion += 1;
                    if suspicion >= 3 {
                        status = SolveStatus::InfeasibleDetected;
                        break;
                    }
                } else {
                    suspicion = 0;
                }
                if config.adaptive_penalty && it >= next_adapt {
                    let f = (res.primal.max(1e-300) / res.dual.max(1e-300)).sqrt();
                    if !(1.0 / PENALTY_STEP..=PENALTY_STEP).contains(&f) {
                        sigma = (sigma * f).clamp(PENALTY_RANGE.0, PENALTY_RANGE.1);
                        // each change waits twice as long as the previous one
                        adapt_window *= 2;
                        next_adapt = it + adapt_window;
                        accel.reset();
                        continue;
                    }
                }
            }

            if accelerate {
                if let Some(next) = accel.step(&w_in, &w_out) {
                    fallback = Some((w_out.clone(), gnorm));
                    z.copy_from_slice(&next[..nx]);
                    lam.iter_mut().zip(&next[nx..]).for_each(|(l, v)| *l = v * sigma);
                }
            }
        }
        self.penalty = sigma;
        let x: Vec<f64> = z.iter().zip(&e).map(|(z, e)| z * e).collect();
        let s: Vec<f64> = lam.iter().zip(&e).map(|(l, e)| -l / e).collect();
        debug!("conic solve: {status:?} after {iterations} iterations, residuals {res:?}");
        Ok(ConicSolution {
            status,
            primal_objective: dot(c, &x),
            dual_objective: dot(b, &y),
            x,
            y,
            s,
            residuals: res,
            iterations,
        })
    }

    /// Overwrite `v = [x; b']` by the projection of `x` onto `{A'x = b'}` and the
    /// associated multiplier.
    fn project_affine(&self, v: &mut [f64], work: &mut Vec<f64>) {
        let target = v.to_vec();
        self.kkt.solve_in_place(v, work);
        let tnorm = norm(&target);
        for _ in 0..4 {
            let r = self.kkt_residual(&target, v);
            if norm(&r) <= 1e-14 * (1.0 + tnorm) {
                break;
            }
            let mut d = r;
            self.kkt.solve_in_place(&mut d, work);
            v.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
    }

    /// `target − K₀ v` with `K₀ = [I A'ᵀ; A' 0]`.
    fn kkt_residual(&self, target: &[f64], v: &[f64]) -> Vec<f64> {
        let problem = &self.scaled;
        let nx = problem.num_vars();
        let mut r = target.to_vec();
        for k in 0..nx {
            r[k] -= v[k];
        }
        for (i, &d) in self.scale.iter().enumerate() {
            let wi = v[nx + i];
            let mut ax = 0.0;
            for (c, a) in problem.row(i) {
                let a = a * d;
                r[c] -= a * wi;
                ax += a * v[c];
            }
            r[nx + i] -= ax;
        }
        r
    }
}

fn check_scaling(problem: &ConicProblem, e: &[f64]) -> Result<()> {
    if e.len() != problem.num_vars() {
        return Err(Error::DimensionMismatch(format!(
            "scaling of length {} for {} variables",
            e.len(),
            problem.num_vars()
        )));
    }
    if let Some(v) = e.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!("scaling entry {v} is not positive")));
    }
    let mut off = 0;
    for cone in problem.cones() {
        if let Cone::Psd(n) = *cone {
            let block = PsdBlock { offset: off, side: n };
            let d: Vec<f64> = (0..n).map(|i| e[block.entry(i, i).0].sqrt()).collect();
            for j in 0..n {
                for i in j + 1..n {
                    let want = d[i] * d[j];
                    if (e[block.entry(i, j).0] - want).abs() > 1e-12 * want {
                        return Err(Error::InvalidArgument(
                            "scaling of a PSD block must be a diagonal congruence".into(),
                        ));
                    }
                }
            }
        }
        off += cone.dim();
    }
    Ok(())
}

fn residuals_with_s_neg(
    p: &ConicProblem,
    x: &[f64],
    y: &[f64],
    lam: &[f64],
    bnorm: f64,
    cnorm: f64,
) -> Residuals {
    let c = p.objective();
    let b = p.rhs();
    let mut pr = 0.0;
    for (i, &bi) in b.iter().enumerate() {
        let ax: f64 = p.row(i).map(|(k, v)| v * x[k]).sum();
        pr += (ax - bi) * (ax - bi);
    }
    let mut st: Vec<f64> = c.iter().zip(lam).map(|(c, l)| c + l).collect();
    for (i, &yi) in y.iter().enumerate() {
        for (k, v) in p.row(i) {
            st[k] -= v * yi;
        }
    }
    let pobj = dot(c, x);
    let dobj = dot(b, y);
    Residuals {
        primal: pr.sqrt() / (1.0 + bnorm),
        dual: norm(&st) / (1.0 + cnorm),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
    }
}

/// Farkas-type test on the latest iterate differences: a dual ray certifies
/// primal infeasibility, a primal ray certifies dual infeasibility.
fn certifies_infeasibility(
    p: &ConicProblem,
    y: &[f64],
    prev_y: &[f64],
    z: &[f64],
    prev_z: &[f64],
) -> bool {
    const EPS: f64 = 1e-6;
    let dy: Vec<f64> = y.iter().zip(prev_y).map(|(a, b)| a - b).collect();
    let ny = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if ny > 0.0 {
        let by = dot(p.rhs(), &dy);
        let at = p.at_mul(&dy);
        for sign in [1.0, -1.0] {
            // need sign·Aᵀdy ∈ K* and sign·bᵀdy < 0
            if sign * by < -EPS * ny * (1.0 + norm(p.rhs())) {
                let t: Vec<f64> = at.iter().map(|v| sign * v).collect();
                let mut proj = t.clone();
                p.project_dual(&mut proj);
                let dist = norm(&t.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<_>>());
                if dist <= EPS * ny * (1.0 + norm(p.objective())) {
                    return true;
                }
            }
        }
    }
    let dz: Vec<f64> = z.iter().zip(prev_z).map(|(a, b)| a - b).collect();
    let nz = dz.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if nz > 0.0 && dot(p.objective(), &dz) < -EPS * nz * (1.0 + norm(p.objective())) {
        let adz = p.a_mul(&dz);
        let mut proj = dz.clone();
        p.project_primal(&mut proj);
        let cone_dist = norm(&dz.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<_>>());
        if norm(&adz) <= EPS * nz * (1.0 + norm(p.rhs())) && cone_dist <= EPS * nz {
            return true;
        }
    }
    false
}
