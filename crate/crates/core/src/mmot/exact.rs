//! Exact MMOT by linear programming over the joint measure.
//!
//! The LP has one variable per joint configuration and `1 + Σ_p (N_p − 1)`
//! rows: total mass plus the marginal constraints for every state except state
//! 0 of each site. This row set has full rank, and its multipliers are the
//! site potentials in the gauge `φ_p(0) = 0`, with the total-mass multiplier
//! collected in a scalar offset.

use log::debug;

use super::{decode, joint_len, JointMeasure, MarginalSet, PairwiseCost};
use crate::conic::simplex::{solve_lp, ColumnSource, LpOptions, LpStatus};
use crate::error::{Error, Result};

const SUPPORT_TOL: f64 = 1e-14;
const BASIC_TOL: f64 = 1e-9;

/// Optimal value, an optimal plan and optimal Kantorovich potentials.
#[derive(Debug, Clone)]
pub struct MmotResult {
    /// Primal optimum `E_sce`.
    pub value: f64,
    /// `offset + Σ_p ⟨φ_p, μ_p⟩`.
    pub dual_value: f64,
    pub plan: JointMeasure,
    /// `φ_p`, normalized so that `φ_p(0) = 0`.
    pub site_potentials: Vec<Vec<f64>>,
    /// Constant term of the dual: `offset + Σ_p φ_p(s_p) ≤ C(s)` for all `s`.
    pub offset: f64,
    /// `φ_r(1) − φ_r(0)` for binary state spaces.
    pub gradient: Option<Vec<f64>>,
    /// The optimal basis is nondegenerate, so the potentials are the unique
    /// optimal dual (and `gradient` is a true gradient).
    pub unique_duals: bool,
    /// `min_s [C(s) − offset − Σ_p φ_p(s_p)]`; nonnegative up to round-off.
    pub min_dual_slack: f64,
    /// `Σ_s μ(s) [C(s) − offset − Σ_p φ_p(s_p)]`.
    pub complementary_slackness: f64,
    pub iterations: usize,
}

struct JointColumns<'a> {
    sizes: &'a [usize],
    row_offset: Vec<usize>,
    costs: Vec<f64>,
    rows: usize,
}

impl JointColumns<'_> {
    fn for_each_row(&self, mut j: usize, mut f: impl FnMut(usize)) {
        f(0);
        for (i, &n) in self.sizes.iter().enumerate().rev() {
            let a = j % n;
            j /= n;
            if a > 0 {
                f(self.row_offset[i] + a - 1);
            }
        }
    }
}

impl ColumnSource for JointColumns<'_> {
    fn num_rows(&self) -> usize {
        self.rows
    }
    fn num_cols(&self) -> usize {
        self.costs.len()
    }
    fn cost(&self, j: usize) -> f64 {
        self.costs[j]
    }
    fn dot(&self, j: usize, y: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each_row(j, |r| s += y[r]);
        s
    }
    fn axpy(&self, j: usize, scale: f64, out: &mut [f64]) {
        self.for_each_row(j, |r| out[r] += scale);
    }
}

/// Solve `min Σ_s C(s) μ(s)` over joint measures with the given one-site marginals.
pub fn solve_exact_mmot(c: &PairwiseCost, m: &MarginalSet) -> Result<MmotResult> {
    c.check_compatible(m)?;
    let sizes = m.sizes();
    let l = sizes.len();
    let full_len = joint_len(&sizes)?;

    // states carrying mass; sites with a single such state are pinned
    let support: Vec<Vec<usize>> = (0..l)
        .map(|p| (0..sizes[p]).filter(|&a| m.marginal(p)[a] > SUPPORT_TOL).collect())
        .collect();
    let kept: Vec<usize> = (0..l).filter(|&p| support[p].len() > 1).collect();
    let red_sizes: Vec<usize> = kept.iter().map(|&p| support[p].len()).collect();
    let red_len: usize = red_sizes.iter().product();

    let mut base: Vec<usize> = support.iter().map(|s| s[0]).collect();
    let mut red = vec![0; kept.len()];
    let costs: Vec<f64> = (0..red_len)
        .map(|k| {
            decode(k, &red_sizes, &mut red);
            for (i, &p) in kept.iter().enumerate() {
                base[p] = support[p][red[i]];
            }
            c.evaluate(&base)
        })
        .collect();

    let mut row_offset = Vec::with_capacity(kept.len());
    let mut rows = 1;
    let mut rhs = vec![1.0];
    for &p in &kept {
        row_offset.push(rows);
        for &a in &support[p][1..] {
            rhs.push(m.marginal(p)[a]);
        }
        rows += support[p].len() - 1;
    }
    let cols = JointColumns { sizes: &red_sizes, row_offset, costs, rows };
    let lp = solve_lp(&cols, &rhs, &LpOptions::default())?;
    match lp.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible("marginal constraints are inconsistent".into())),
        other => return Err(Error::Numerical(format!("transport LP ended with status {other:?}"))),
    }
    debug!(
        "exact MMOT: {} sites ({} free), {} configurations, {} pivots",
        l,
        kept.len(),
        red_len,
        lp.iterations
    );

    // plan on the full joint space
    let mut weights = vec![0.0; full_len];
    let mut s = base.clone();
    for &(j, x) in &lp.basic {
        decode(j, &red_sizes, &mut red);
        for (i, &p) in kept.iter().enumerate() {
            s[p] = support[p][red[i]];
        }
        weights[s.iter().zip(&sizes).fold(0, |k, (&a, &n)| k * n + a)] += x;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let plan = JointMeasure { sizes: sizes.clone(), weights };

    // potentials on supported states, then c-transforms for the rest
    let mut phi: Vec<Vec<Option<f64>>> = sizes.iter().map(|&n| vec![None; n]).collect();
    let mut offset = lp.duals[0];
    for p in 0..l {
        phi[p][support[p][0]] = Some(0.0);
    }
    for (i, &p) in kept.iter().enumerate() {
        for (k, &a) in support[p].iter().enumerate().skip(1) {
            phi[p][a] = Some(lp.duals[cols.row_offset[i] + k - 1]);
        }
    }
    for p in 0..l {
        for a in 0..sizes[p] {
            if phi[p][a].is_none() {
                let v = c_transform(c, &phi, offset, p, a);
                phi[p][a] = Some(v);
            }
        }
    }
    let mut site_potentials: Vec<Vec<f64>> =
        phi.into_iter().map(|v| v.into_iter().map(|x| x.expect("assigned")).collect()).collect();
    for f in site_potentials.iter_mut() {
        let shift = f[0];
        f.iter_mut().for_each(|x| *x -= shift);
        offset += shift;
    }

    let value = plan.cost(c);
    let dual_value = offset
        + site_potentials
            .iter()
            .enumerate()
            .map(|(p, f)| f.iter().zip(m.marginal(p)).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>();
    let mut min_dual_slack = f64::INFINITY;
    let mut complementary_slackness = 0.0;
    for (k, &w) in plan.weights.iter().enumerate() {
        decode(k, &sizes, &mut s);
        let slack = c.evaluate(&s) - offset - s.iter().enumerate().map(|(p, &a)| site_potentials[p][a]).sum::<f64>();
        min_dual_slack = min_dual_slack.min(slack);
        complementary_slackness += w * slack;
    }
    let unique_duals = lp.redundant_rows.is_empty()
        && lp.basic.len() == rows
        && lp.min_basic_value() > BASIC_TOL
        && kept.len() == l;
    let gradient = m
        .is_binary()
        .then(|| site_potentials.iter().map(|f| f[1] - f[0]).collect());
    Ok(MmotResult {
        value,
        dual_value,
        plan,
        site_potentials,
        offset,
        gradient,
        unique_duals,
        min_dual_slack,
        complementary_slackness,
        iterations: lp.iterations,
    })
}

/// Largest value of `φ_p(a)` keeping the dual constraints satisfied against
/// all configurations built from already-assigned states.
fn c_transform(c: &PairwiseCost, phi: &[Vec<Option<f64>>], offset: f64, p: usize, a: usize) -> f64 {
    let l = phi.len();
    let choices: Vec<Vec<(usize, f64)>> = (0..l)
        .map(|q| {
            if q == p {
                vec![(a, 0.0)]
            } else {
                phi[q].iter().enumerate().filter_map(|(b, v)| v.map(|v| (b, v))).collect()
            }
        })
        .collect();
    let radix: Vec<usize> = choices.iter().map(Vec::len).collect();
    let count: usize = radix.iter().product();
    let mut idx = vec![0; l];
    let mut s = vec![0; l];
    let mut best = f64::INFINITY;
    for k in 0..count {
        decode(k, &radix, &mut idx);
        let mut pot = offset;
        for q in 0..l {
            let (b, v) = choices[q][idx[q]];
            s[q] = b;
            pot += v;
        }
        best = best.min(c.evaluate(&s) - pot);
    }
    best
}

/// Binary-case gradient `φ_r(1) − φ_r(0)` of `E_sce` from the LP potentials.
pub fn grad_from_lp_dual(r: &MmotResult) -> Result<Vec<f64>> {
    if r.site_potentials.is_empty() {
        return Err(Error::MissingDuals);
    }
    if r.site_potentials.iter().any(|f| f.len() != 2) {
        return Err(Error::NonBinary);
    }
    Ok(r.site_potentials.iter().map(|f| f[1] - f[0]).collect())
}
