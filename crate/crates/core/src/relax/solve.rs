//! Solving the relaxations, with boundary elimination and warm starts.

use log::{debug, warn};
use nalgebra::DMatrix;

use super::assemble::{assemble, Relaxation};
use super::certificate::{extract_certificate, sdp_gradient, DualCertificate};
use super::{MomentMatrix, RelaxationOrder, ThreeMarginalTensor};
use crate::conic::{ConicSolution, ConicSolver, Residuals, SolveStatus, SolverConfig, WarmStart};
use crate::error::{Error, Result};
use crate::mmot::{offsets, MarginalSet, PairwiseCost};

const SUPPORT_TOL: f64 = 1e-14;

/// Outcome of a relaxation solve, expressed on the original state spaces.
#[derive(Debug, Clone)]
pub struct RelaxationResult {
    pub order: RelaxationOrder,
    /// Primal objective `Tr(CM)`.
    pub value: f64,
    /// Dual objective of the certificate.
    pub dual_value: f64,
    pub moments: MomentMatrix,
    pub three_marginals: Option<ThreeMarginalTensor>,
    pub certificate: DualCertificate,
    /// SCE potential for binary marginals.
    pub gradient: Option<Vec<f64>>,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl RelaxationResult {
    /// `|value − dual_value| / (1 + |value| + |dual_value|)`.
    pub fn relative_gap(&self) -> f64 {
        (self.value - self.dual_value).abs() / (1.0 + self.value.abs() + self.dual_value.abs())
    }
}

/// Sites and states that survive boundary elimination.
#[derive(Debug, Clone, PartialEq)]
struct Reduction {
    sites: Vec<usize>,
    states: Vec<Vec<usize>>,
    /// Support state of every site (meaningful for pinned sites).
    anchor: Vec<usize>,
}

impl Reduction {
    fn new(m: &MarginalSet, tol: f64) -> Self {
        let l = m.num_sites();
        let support: Vec<Vec<usize>> = (0..l)
            .map(|p| (0..m.marginal(p).len()).filter(|&a| m.marginal(p)[a] > tol).collect())
            .collect();
        let sites: Vec<usize> = (0..l).filter(|&p| support[p].len() > 1).collect();
        let anchor = support.iter().map(|s| s[0]).collect();
        let states = sites.iter().map(|&p| support[p].clone()).collect();
        Reduction { sites, states, anchor }
    }

    fn is_identity(&self, sizes: &[usize]) -> bool {
        self.sites.len() == sizes.len() && self.states.iter().zip(sizes).all(|(s, &n)| s.len() == n)
    }

    fn sizes(&self) -> Vec<usize> {
        self.states.iter().map(Vec::len).collect()
    }

    fn marginals(&self, m: &MarginalSet) -> Result<MarginalSet> {
        MarginalSet::new(
            self.sites
                .iter()
                .zip(&self.states)
                .map(|(&p, st)| {
                    let v: Vec<f64> = st.iter().map(|&a| m.marginal(p)[a]).collect();
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / s).collect()
                })
                .collect(),
        )
    }

    fn cost(&self, c: &PairwiseCost) -> Result<PairwiseCost> {
        let sizes = self.sizes();
        let mut out = PairwiseCost::zeros(&sizes);
        let l = self.sites.len();
        for i in 0..l {
            for j in i + 1..l {
                let full = c.block(self.sites[i], self.sites[j]);
                let blk = DMatrix::from_fn(sizes[i], sizes[j], |a, b| full[(self.states[i][a], self.states[j][b])]);
                out.set_block(i, j, blk)?;
            }
        }
        Ok(out)
    }

    /// Contribution of pairs involving a pinned site: `2 Σ μ_pᵀ C_pq μ_q`.
    fn constant(&self, c: &PairwiseCost, m: &MarginalSet) -> f64 {
        let l = m.num_sites();
        let kept: Vec<bool> = (0..l).map(|p| self.sites.contains(&p)).collect();
        let mut total = 0.0;
        for p in 0..l {
            for q in p + 1..l {
                if kept[p] && kept[q] {
                    continue;
                }
                let blk = c.block(p, q);
                let (mp, mq) = (m.marginal(p), m.marginal(q));
                for a in 0..mp.len() {
                    for b in 0..mq.len() {
                        total += 2.0 * mp[a] * blk[(a, b)] * mq[b];
                    }
                }
            }
        }
        total
    }
}

struct Cached {
    reduction: Reduction,
    cost: PairwiseCost,
    relaxation: Relaxation,
    solver: ConicSolver,
    /// State masses the solver scaling was built from.
    masses: Vec<f64>,
    warm: Option<WarmStart>,
}

/// Reusable solver for a sequence of relaxations sharing a cost, such as the
/// iterations of a self-consistent field loop. The factorization is kept as
/// long as the set of eliminated sites and states does not change, and each
/// solve starts from the previous solution.
pub struct RelaxationSolver {
    order: RelaxationOrder,
    config: SolverConfig,
    warm_start: bool,
    support_tolerance: f64,
    inexact_tolerance: Option<f64>,
    cache: Option<Cached>,
}

impl RelaxationSolver {
    pub fn new(order: RelaxationOrder, config: SolverConfig) -> Self {
        RelaxationSolver { order, config, warm_start: true, support_tolerance: SUPPORT_TOL, inexact_tolerance: None, cache: None }
    }

    /// States whose mass is at most `tol` are treated as unsupported and
    /// eliminated before assembly (default `1e-14`). Raising it trades an
    /// `O(tol)` perturbation of the marginals for a better conditioned problem.
    pub fn with_support_tolerance(mut self, tol: f64) -> Self {
        self.support_tolerance = tol;
        self.cache = None;
        self
    }

    /// Accept a solve that hits the iteration cap when all residuals are below
    /// `tol` (which should exceed the solver tolerance), logging a warning.
    /// By default such solves are reported as [`Error::NotConverged`].
    pub fn with_inexact_tolerance(mut self, tol: f64) -> Self {
        self.inexact_tolerance = Some(tol);
        self
    }

    pub fn with_warm_start(mut self, enabled: bool) -> Self {
        self.warm_start = enabled;
        self
    }

    pub fn order(&self) -> RelaxationOrder {
        self.order
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Drop the cached factorization and warm start.
    pub fn reset(&mut self) {
        self.cache = None;
    }

    pub fn solve(&mut self, c: &PairwiseCost, m: &MarginalSet) -> Result<RelaxationResult> {
        c.check_compatible(m)?;
        let sizes = m.sizes();
        let red = Reduction::new(m, self.support_tolerance);
        let constant = red.constant(c, m);
        if red.sites.len() < 2 {
            return self.trivial(c, m, &red, constant);
        }
        let red_m = red.marginals(m)?;

        let reuse = matches!(&self.cache, Some(k) if k.reduction == red && same_cost(c, &red, &k.cost));
        if !reuse {
            let red_c = red.cost(c)?;
            let relaxation = assemble(&red_c, &red_m, self.order)?;
            let solver = ConicSolver::with_scaling(relaxation.problem(), relaxation.variable_scaling(&red_m))?;
            debug!(
                "assembled {:?} relaxation: {} variables, {} rows",
                self.order,
                relaxation.problem().num_vars(),
                relaxation.problem().num_rows()
            );
            let masses = flat_masses(&red_m);
            self.cache = Some(Cached { reduction: red.clone(), cost: red_c, relaxation, solver, masses, warm: None });
        }
        let cache = self.cache.as_mut().expect("cache filled above");
        cache.relaxation.set_marginals(&red_m)?;
        let masses = flat_masses(&red_m);
        let drifted = masses.iter().zip(&cache.masses).any(|(a, b)| !(0.5..=2.0).contains(&(a / b)));
        if drifted {
            debug!("state masses moved, refactoring the scaled system");
            cache.solver = ConicSolver::with_scaling(cache.relaxation.problem(), cache.relaxation.variable_scaling(&red_m))?;
            cache.masses = masses;
            cache.warm = None;
        }
        let warm = if self.warm_start { cache.warm.as_ref() } else { None };
        let sol = cache.solver.solve(cache.relaxation.problem(), &self.config, warm, None)?;
        let mut tolerance = self.config.tolerance;
        let accepted = match (sol.status, self.inexact_tolerance) {
            (SolveStatus::Converged, _) => true,
            (SolveStatus::MaxIterations, Some(t)) if sol.residuals.max() <= t => {
                warn!(
                    "accepting relaxation solve after {} iterations with residual {:.2e} above the tolerance {:.1e}",
                    sol.iterations,
                    sol.residuals.max(),
                    self.config.tolerance
                );
                tolerance = t;
                true
            }
            _ => false,
        };
        if !accepted {
            cache.warm = None;
            return Err(Error::NotConverged {
                iterations: sol.iterations,
                primal: sol.residuals.primal,
                dual: sol.residuals.dual,
                gap: sol.residuals.gap,
            });
        }
        cache.warm = Some(WarmStart::from_solution(&sol, cache.solver.last_penalty()));
        let cert = extract_certificate(&sol, &cache.relaxation, &cache.cost, tolerance)?;
        let mut res = expand(&sol, &cache.relaxation, cert, &red, c, m, constant)?;
        res.residuals = sol.residuals;
        res.iterations = sol.iterations;
        debug_assert_eq!(res.moments.sizes(), &sizes[..]);
        Ok(res)
    }

    fn trivial(&self, c: &PairwiseCost, m: &MarginalSet, red: &Reduction, constant: f64) -> Result<RelaxationResult> {
        let sizes = m.sizes();
        let l = sizes.len();
        let n: usize = sizes.iter().sum();
        let pairs: Vec<(usize, usize)> = (0..l).flat_map(|p| (p + 1..l).map(move |q| (p, q))).collect();
        let mut cert = DualCertificate::new(
            sizes.clone(),
            DMatrix::zeros(n, n),
            pairs.iter().map(|&(p, _)| vec![f64::NAN; sizes[p]]).collect(),
            pairs.iter().map(|&(_, q)| vec![f64::NAN; sizes[q]]).collect(),
            (self.order == RelaxationOrder::Three)
                .then(|| pairs.iter().map(|&(p, q)| DMatrix::zeros(sizes[p], sizes[q])).collect()),
        )
        .expect("sizes consistent");
        cert.complete(c, m)?;
        let moments = product_moments(m, red, None);
        let three = (self.order == RelaxationOrder::Three).then(|| product_three(m));
        let dual_value = cert.dual_objective(m);
        let gradient = sdp_gradient(&cert).ok();
        Ok(RelaxationResult {
            order: self.order,
            value: constant,
            dual_value,
            moments,
            three_marginals: three,
            certificate: cert,
            gradient,
            residuals: Residuals::default(),
            iterations: 0,
        })
    }
}

fn flat_masses(m: &MarginalSet) -> Vec<f64> {
    (0..m.num_sites()).flat_map(|p| m.marginal(p).to_vec()).collect()
}

fn same_cost(c: &PairwiseCost, red: &Reduction, cached: &PairwiseCost) -> bool {
    let l = red.sites.len();
    for i in 0..l {
        for j in i + 1..l {
            let full = c.block(red.sites[i], red.sites[j]);
            let old = cached.block(i, j);
            for (a, &fa) in red.states[i].iter().enumerate() {
                for (b, &fb) in red.states[j].iter().enumerate() {
                    if full[(fa, fb)] != old[(a, b)] {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Moment matrix on the full state space: reduced blocks where available,
/// products `μ_p μ_qᵀ` for pairs touching a pinned site.
fn product_moments(m: &MarginalSet, red: &Reduction, reduced: Option<&MomentMatrix>) -> MomentMatrix {
    let sizes = m.sizes();
    let offs = offsets(&sizes);
    let n: usize = sizes.iter().sum();
    let l = sizes.len();
    let mut full = DMatrix::zeros(n, n);
    for p in 0..l {
        for q in 0..l {
            for a in 0..sizes[p] {
                for b in 0..sizes[q] {
                    full[(offs[p] + a, offs[q] + b)] = if p == q {
                        if a == b {
                            m.marginal(p)[a]
                        } else {
                            0.0
                        }
                    } else {
                        m.marginal(p)[a] * m.marginal(q)[b]
                    };
                }
            }
        }
    }
    if let Some(r) = reduced {
        let rm = r.matrix();
        let roffs = offsets(r.sizes());
        for (i, &p) in red.sites.iter().enumerate() {
            for (j, &q) in red.sites.iter().enumerate() {
                if i == j {
                    continue;
                }
                // unsupported states keep their zero rows from the product
                for a in 0..sizes[p] {
                    for b in 0..sizes[q] {
                        full[(offs[p] + a, offs[q] + b)] = 0.0;
                    }
                }
                for (a, &fa) in red.states[i].iter().enumerate() {
                    for (b, &fb) in red.states[j].iter().enumerate() {
                        full[(offs[p] + fa, offs[q] + fb)] = rm[(roffs[i] + a, roffs[j] + b)];
                    }
                }
            }
        }
    }
    MomentMatrix::from_dense(sizes, full).expect("sizes consistent")
}

fn product_three(m: &MarginalSet) -> ThreeMarginalTensor {
    let sizes = m.sizes();
    let l = sizes.len();
    let mut blocks = Vec::new();
    for p in 0..l {
        for q in p + 1..l {
            for r in q + 1..l {
                let (mp, mq, mr) = (m.marginal(p), m.marginal(q), m.marginal(r));
                let mut v = Vec::with_capacity(mp.len() * mq.len() * mr.len());
                for &x in mp {
                    for &y in mq {
                        for &z in mr {
                            v.push(x * y * z);
                        }
                    }
                }
                blocks.push(v);
            }
        }
    }
    ThreeMarginalTensor::from_blocks(sizes, blocks).expect("sizes consistent")
}

/// Reinsert eliminated sites and states. Pinned sites are point masses, so
/// every block that touches one factorizes.
fn expand(
    sol: &ConicSolution,
    relax: &Relaxation,
    cert: DualCertificate,
    red: &Reduction,
    c: &PairwiseCost,
    m: &MarginalSet,
    constant: f64,
) -> Result<RelaxationResult> {
    let sizes = m.sizes();
    let l = sizes.len();
    let reduced_m = relax.moment_matrix(&sol.x);
    let value_reduced = reduced_m.objective(&red.cost(c)?);

    if red.is_identity(&sizes) {
        let three = relax.three_marginals(&sol.x);
        let dual_value = cert.dual_objective(m);
        let gradient = sdp_gradient(&cert).ok();
        return Ok(RelaxationResult {
            order: relax.order(),
            value: value_reduced,
            dual_value,
            moments: reduced_m,
            three_marginals: three,
            certificate: cert,
            gradient,
            residuals: Residuals::default(),
            iterations: 0,
        });
    }

    let moments = product_moments(m, red, Some(&reduced_m));
    let three = relax.three_marginals(&sol.x).map(|k| {
        let mut local = vec![usize::MAX; l];
        for (i, &p) in red.sites.iter().enumerate() {
            local[p] = i;
        }
        let mut blocks = Vec::new();
        for p in 0..l {
            for q in p + 1..l {
                for r in q + 1..l {
                    let trip = [p, q, r];
                    let mut v = vec![0.0; sizes[p] * sizes[q] * sizes[r]];
                    let kept: Vec<usize> = trip.iter().copied().filter(|&s| local[s] != usize::MAX).collect();
                    for a in 0..sizes[p] {
                        for b in 0..sizes[q] {
                            for cc in 0..sizes[r] {
                                let st = [a, b, cc];
                                let idx = (a * sizes[q] + b) * sizes[r] + cc;
                                // pinned factors
                                let mut w = 1.0;
                                for t in 0..3 {
                                    if local[trip[t]] == usize::MAX {
                                        w *= m.marginal(trip[t])[st[t]];
                                    }
                                }
                                if w == 0.0 {
                                    continue;
                                }
                                let reduced_state = |s: usize, t: usize| red.states[local[s]].iter().position(|&x| x == st[t]);
                                v[idx] = match kept.len() {
                                    0 => w,
                                    1 => {
                                        let t = trip.iter().position(|&s| s == kept[0]).expect("member");
                                        w * m.marginal(kept[0])[st[t]]
                                    }
                                    2 => {
                                        let (t0, t1) = (
                                            trip.iter().position(|&s| s == kept[0]).expect("member"),
                                            trip.iter().position(|&s| s == kept[1]).expect("member"),
                                        );
                                        w * moments.block(kept[0], kept[1])[(st[t0], st[t1])]
                                    }
                                    _ => match (reduced_state(p, 0), reduced_state(q, 1), reduced_state(r, 2)) {
                                        (Some(x), Some(y), Some(z)) => k.get([local[p], local[q], local[r]], [x, y, z]),
                                        _ => 0.0,
                                    },
                                };
                            }
                        }
                    }
                    blocks.push(v);
                }
            }
        }
        ThreeMarginalTensor::from_blocks(sizes.clone(), blocks).expect("sizes consistent")
    });

    let mut full_cert = cert.embed(&sizes, &red.sites, &red.states);
    full_cert.complete(c, m)?;
    let dual_value = full_cert.dual_objective(m);
    let gradient = sdp_gradient(&full_cert).ok();
    if !dual_value.is_finite() {
        warn!("dual value after reinsertion is not finite");
    }
    Ok(RelaxationResult {
        order: relax.order(),
        value: value_reduced + constant,
        dual_value,
        moments,
        three_marginals: three,
        certificate: full_cert,
        gradient,
        residuals: Residuals::default(),
        iterations: 0,
    })
}

/// One-shot solve of the relaxation of the given order.
pub fn solve_relaxation(
    c: &PairwiseCost,
    m: &MarginalSet,
    order: RelaxationOrder,
    config: &SolverConfig,
) -> Result<RelaxationResult> {
    RelaxationSolver::new(order, config.clone()).with_warm_start(false).solve(c, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmot::solve_exact_mmot;
    use crate::relax::check_primal_feasibility;

    fn tight() -> SolverConfig {
        SolverConfig { tolerance: 1e-9, ..Default::default() }
    }

    fn dimer_cost() -> PairwiseCost {
        let mut c = PairwiseCost::zeros(&[2, 2]);
        c.set_block(0, 1, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
        c
    }

    #[test]
    fn half_filled_dimer_avoids_double_occupancy() {
        let m = MarginalSet::from_density(&[0.5, 0.5]).unwrap();
        let r = solve_relaxation(&dimer_cost(), &m, RelaxationOrder::Two, &tight()).unwrap();
        assert!(r.value.abs() < 1e-8);
        assert!(r.dual_value.abs() < 1e-8);
        let b = r.moments.block(0, 1);
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!((b - want).amax() < 1e-6);
    }

    #[test]
    fn zero_cost_gives_zero_certificate() {
        let c = PairwiseCost::zeros(&[2, 2, 2]);
        let m = MarginalSet::from_density(&[0.2, 0.7, 0.4]).unwrap();
        let r = solve_relaxation(&c, &m, RelaxationOrder::Two, &tight()).unwrap();
        assert!(r.value.abs() < 1e-9 && r.dual_value.abs() < 1e-9);
        let g = r.gradient.unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
    }

    #[test]
    fn pinned_sites_are_eliminated() {
        let mut c = PairwiseCost::zeros(&[2, 2, 2, 2]);
        let vals = [0.0, 1.0, 0.3, 0.7, 0.2, 0.9];
        let mut k = 0;
        for p in 0..4 {
            for q in p + 1..4 {
                c.set_block(p, q, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, vals[k]])).unwrap();
                k += 1;
            }
        }
        let m = MarginalSet::from_density(&[0.4, 1.0, 0.0, 0.7]).unwrap();
        let lp = solve_exact_mmot(&c, &m).unwrap();
        for order in [RelaxationOrder::Two, RelaxationOrder::Three] {
            let r = solve_relaxation(&c, &m, order, &tight()).unwrap();
            assert!((r.value - lp.value).abs() < 1e-7, "{order:?}: {} vs {}", r.value, lp.value);
            assert!((r.dual_value - r.value).abs() < 1e-7);
            let rep = check_primal_feasibility(&r.moments, r.three_marginals.as_ref(), &m).unwrap();
            assert!(rep.max_violation() < 1e-6, "{rep:?}");
            assert!(r.certificate.potential_violation(&c) < 1e-7);
        }
    }

    #[test]
    fn fully_pinned_is_a_product() {
        let c = dimer_cost();
        let m = MarginalSet::from_density(&[1.0, 1.0]).unwrap();
        let r = solve_relaxation(&c, &m, RelaxationOrder::Two, &tight()).unwrap();
        assert_eq!(r.value, 2.0);
        assert!((r.dual_value - 2.0).abs() < 1e-12);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn warm_started_sequence_matches_cold_solves() {
        let mut c = PairwiseCost::zeros(&[2, 2, 2]);
        c.set_block(0, 1, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
        c.set_block(1, 2, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
        c.set_block(0, 2, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.4])).unwrap();
        let mut solver = RelaxationSolver::new(RelaxationOrder::Two, tight());
        for rho in [[0.5, 0.5, 0.5], [0.52, 0.49, 0.5], [0.55, 0.45, 0.51]] {
            let m = MarginalSet::from_density(&rho).unwrap();
            let warm = solver.solve(&c, &m).unwrap();
            let cold = solve_relaxation(&c, &m, RelaxationOrder::Two, &tight()).unwrap();
            assert!((warm.value - cold.value).abs() < 1e-7);
        }
    }
}
