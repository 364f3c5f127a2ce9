//! Dual certificates of the relaxations and the SCE potential they induce.

use nalgebra::DMatrix;

use super::assemble::Relaxation;
use super::{MomentMatrix, RelaxationOrder};
use crate::conic::simplex::{solve_lp, LpOptions, LpStatus, SparseColumns};
use crate::conic::{min_eigenvalue, smat, ConicSolution, SolveStatus};
use crate::error::{Error, Result};
use crate::mmot::{offsets, pair_index, MarginalSet, PairwiseCost};

/// Dual variables `(Y, {φ_pq, ψ_pq})`, plus the halved multipliers of the
/// 3-marginal consistency rows when present.
///
/// Dual feasibility reads `Y ⪰ 0` and `C_pq − Y_pq − φ_pq 1ᵀ − 1 ψ_pqᵀ − Σ_r κ_pq^r ≥ 0`
/// for `p < q`; the dual objective is
/// `2 Σ_{p<q} (⟨φ_pq, μ_p⟩ + ⟨ψ_pq, μ_q⟩) − Σ_p Σ_s Y_pp(s,s) μ_p(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    y: DMatrix<f64>,
    phi: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
    /// Per unordered pair: `Σ_r κ_pq^r` as an `N_p × N_q` matrix.
    consistency: Option<Vec<DMatrix<f64>>>,
}

impl DualCertificate {
    /// Assemble a certificate from its parts; `phi`/`psi` are indexed by
    /// unordered pair in lexicographic order.
    pub fn new(
        sizes: Vec<usize>,
        y: DMatrix<f64>,
        phi: Vec<Vec<f64>>,
        psi: Vec<Vec<f64>>,
        consistency: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let l = sizes.len();
        let n: usize = sizes.iter().sum();
        let npairs = l * l.saturating_sub(1) / 2;
        if y.nrows() != n || y.ncols() != n || phi.len() != npairs || psi.len() != npairs {
            return Err(Error::DimensionMismatch("certificate parts do not match the state sizes".into()));
        }
        for p in 0..l {
            for q in p + 1..l {
                let k = pair_index(l, p, q);
                if phi[k].len() != sizes[p] || psi[k].len() != sizes[q] {
                    return Err(Error::DimensionMismatch(format!("potentials for pair ({p}, {q})")));
                }
            }
        }
        let offsets = offsets(&sizes);
        Ok(DualCertificate { sizes, offsets, y, phi, psi, consistency })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn y_block(&self, p: usize, q: usize) -> DMatrix<f64> {
        self.y.view((self.offsets[p], self.offsets[q]), (self.sizes[p], self.sizes[q])).into_owned()
    }

    /// `φ_pq`, extended to `p > q` by `φ_pq = ψ_qp`.
    pub fn phi(&self, p: usize, q: usize) -> &[f64] {
        let l = self.sizes.len();
        if p < q {
            &self.phi[pair_index(l, p, q)]
        } else {
            &self.psi[pair_index(l, q, p)]
        }
    }

    /// `ψ_pq` for `p < q`.
    pub fn psi(&self, p: usize, q: usize) -> &[f64] {
        &self.psi[pair_index(self.sizes.len(), p, q)]
    }

    /// Multiplier of the diagonal-block pin, `X_p = −Y_pp`.
    pub fn x_block(&self, p: usize) -> DMatrix<f64> {
        -self.y_block(p, p)
    }

    /// Slack of the pairwise constraint, `Z_pq = C_pq − Y_pq − φ_pq 1ᵀ − 1 ψ_pqᵀ (− Σ_r κ_pq^r)`.
    pub fn z_block(&self, c: &PairwiseCost, p: usize, q: usize) -> DMatrix<f64> {
        let l = self.sizes.len();
        let k = pair_index(l, p, q);
        let mut z = c.block(p, q) - self.y_block(p, q);
        for a in 0..self.sizes[p] {
            for b in 0..self.sizes[q] {
                z[(a, b)] -= self.phi[k][a] + self.psi[k][b];
            }
        }
        if let Some(k3) = &self.consistency {
            z -= &k3[k];
        }
        z
    }

    pub fn has_consistency_multipliers(&self) -> bool {
        self.consistency.is_some()
    }

    /// Dual objective at the given marginals.
    pub fn dual_objective(&self, m: &MarginalSet) -> f64 {
        let l = self.sizes.len();
        let mut total = 0.0;
        for p in 0..l {
            for q in p + 1..l {
                let k = pair_index(l, p, q);
                total += 2.0 * dot(&self.phi[k], m.marginal(p));
                total += 2.0 * dot(&self.psi[k], m.marginal(q));
            }
            for s in 0..self.sizes[p] {
                total -= self.y[(self.offsets[p] + s, self.offsets[p] + s)] * m.marginal(p)[s];
            }
        }
        total
    }

    /// Largest violation of the pairwise dual constraints (0 when feasible).
    pub fn potential_violation(&self, c: &PairwiseCost) -> f64 {
        let l = self.sizes.len();
        let mut worst = 0.0f64;
        for p in 0..l {
            for q in p + 1..l {
                worst = worst.max(-self.z_block(c, p, q).min());
            }
        }
        worst
    }

    /// Smallest eigenvalue of `Y`.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.y)
    }

    /// Project `Y` onto the range of `Q` (the orthogonal complement of the block
    /// indicator differences) and re-fit every pair of potentials by an exact
    /// two-marginal transport dual with effective cost `C_pq − Y_pq`.
    ///
    /// The dual objective is unchanged: every locally consistent `M` satisfies
    /// `MP = 0`, so `Tr(YM)` only sees the projected part of `Y`. The re-fitted
    /// potentials satisfy the pairwise constraints exactly and are gauged to
    /// `φ_pq(0) = 0`.
    pub fn normalized(&self, c: &PairwiseCost, m: &MarginalSet) -> Result<Self> {
        if self.consistency.is_some() {
            return Err(Error::InvalidArgument(
                "normalization applies to 2-marginal certificates only".into(),
            ));
        }
        let p = MomentMatrix::difference_matrix(&self.sizes);
        let n = self.y.nrows();
        let proj = if p.ncols() == 0 {
            DMatrix::identity(n, n)
        } else {
            let gram = p.transpose() * &p;
            let inv = gram.try_inverse().ok_or_else(|| Error::Numerical("singular difference Gram matrix".into()))?;
            DMatrix::identity(n, n) - &p * inv * p.transpose()
        };
        let mut y = &proj * &self.y * &proj;
        y = (&y + y.transpose()) * 0.5;
        let mut cert = DualCertificate { y, ..self.clone() };
        cert.refit_potentials(c, m, false)?;
        Ok(cert)
    }

    /// Replace `(φ_pq, ψ_pq)` by optimal duals of the pairwise transport problem
    /// with cost `C_pq − Y_pq (− Σ_r κ_pq^r)`. With `only_missing`, pairs whose
    /// current potentials already satisfy the constraints are kept.
    pub(crate) fn refit_potentials(&mut self, c: &PairwiseCost, m: &MarginalSet, only_missing: bool) -> Result<()> {
        let l = self.sizes.len();
        for p in 0..l {
            for q in p + 1..l {
                let k = pair_index(l, p, q);
                if only_missing && self.z_block(c, p, q).min() >= 0.0 {
                    continue;
                }
                let mut cost = c.block(p, q) - self.y_block(p, q);
                if let Some(k3) = &self.consistency {
                    cost -= &k3[k];
                }
                let (phi, psi) = pair_transport_dual(&cost, m.marginal(p), m.marginal(q))?;
                self.phi[k] = phi;
                self.psi[k] = psi;
            }
        }
        Ok(())
    }

    /// Embed into a larger state space: `Y` is zero-padded, existing
    /// potentials are kept on the surviving states and the rest are filled by
    /// c-transforms (which leaves the dual objective unchanged when the new
    /// states carry no mass).
    pub(crate) fn embed(
        &self,
        full_sizes: &[usize],
        site_map: &[usize],
        state_maps: &[Vec<usize>],
    ) -> DualCertificate {
        let lf = full_sizes.len();
        let offs_full = offsets(full_sizes);
        let n: usize = full_sizes.iter().sum();
        let mut y = DMatrix::zeros(n, n);
        let global = |i: usize, a: usize| offs_full[site_map[i]] + state_maps[i][a];
        let lr = self.sizes.len();
        for i in 0..lr {
            for j in 0..lr {
                for a in 0..self.sizes[i] {
                    for b in 0..self.sizes[j] {
                        y[(global(i, a), global(j, b))] = self.y[(self.offsets[i] + a, self.offsets[j] + b)];
                    }
                }
            }
        }
        let npairs = lf * lf.saturating_sub(1) / 2;
        let mut phi = vec![Vec::new(); npairs];
        let mut psi = vec![Vec::new(); npairs];
        let mut cons = self.consistency.as_ref().map(|_| vec![DMatrix::zeros(0, 0); npairs]);
        for p in 0..lf {
            for q in p + 1..lf {
                let k = pair_index(lf, p, q);
                phi[k] = vec![f64::NAN; full_sizes[p]];
                psi[k] = vec![f64::NAN; full_sizes[q]];
                if let Some(cs) = cons.as_mut() {
                    cs[k] = DMatrix::zeros(full_sizes[p], full_sizes[q]);
                }
            }
        }
        for i in 0..lr {
            for j in i + 1..lr {
                let (p, q) = (site_map[i], site_map[j]);
                debug_assert!(p < q);
                let kf = pair_index(lf, p, q);
                let kr = pair_index(lr, i, j);
                for (a, &fa) in state_maps[i].iter().enumerate() {
                    phi[kf][fa] = self.phi[kr][a];
                }
                for (b, &fb) in state_maps[j].iter().enumerate() {
                    psi[kf][fb] = self.psi[kr][b];
                }
                if let (Some(cs), Some(src)) = (cons.as_mut(), self.consistency.as_ref()) {
                    for (a, &fa) in state_maps[i].iter().enumerate() {
                        for (b, &fb) in state_maps[j].iter().enumerate() {
                            cs[kf][(fa, fb)] = src[kr][(a, b)];
                        }
                    }
                }
            }
        }
        DualCertificate { sizes: full_sizes.to_vec(), offsets: offs_full, y, phi, psi, consistency: cons }
    }

    /// Fill potentials left undefined (NaN) by [`embed`](Self::embed): pairs with
    /// nothing defined are solved exactly, partially defined pairs are completed
    /// by c-transforms.
    pub(crate) fn complete(&mut self, c: &PairwiseCost, m: &MarginalSet) -> Result<()> {
        let l = self.sizes.len();
        for p in 0..l {
            for q in p + 1..l {
                let k = pair_index(l, p, q);
                let defined = self.phi[k].iter().chain(&self.psi[k]).any(|v| !v.is_nan());
                let mut cost = c.block(p, q) - self.y_block(p, q);
                if let Some(k3) = &self.consistency {
                    cost -= &k3[k];
                }
                if !defined {
                    let (phi, psi) = pair_transport_dual(&cost, m.marginal(p), m.marginal(q))?;
                    self.phi[k] = phi;
                    self.psi[k] = psi;
                    continue;
                }
                let (np, nq) = (self.sizes[p], self.sizes[q]);
                for a in 0..np {
                    if self.phi[k][a].is_nan() {
                        self.phi[k][a] = (0..nq)
                            .filter(|&b| !self.psi[k][b].is_nan())
                            .map(|b| cost[(a, b)] - self.psi[k][b])
                            .fold(f64::INFINITY, f64::min);
                    }
                }
                for b in 0..nq {
                    if self.psi[k][b].is_nan() {
                        self.psi[k][b] =
                            (0..np).map(|a| cost[(a, b)] - self.phi[k][a]).fold(f64::INFINITY, f64::min);
                    }
                }
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimal Kantorovich potentials of a two-marginal transport problem, gauged
/// to `φ(0) = 0`.
fn pair_transport_dual(cost: &DMatrix<f64>, mu: &[f64], nu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (np, nq) = (mu.len(), nu.len());
    let mut cols = SparseColumns::new(np + nq);
    for a in 0..np {
        for b in 0..nq {
            cols.push(cost[(a, b)], &[(a, 1.0), (np + b, 1.0)])?;
        }
    }
    let rhs: Vec<f64> = mu.iter().chain(nu).copied().collect();
    let lp = solve_lp(&cols, &rhs, &LpOptions::default())?;
    if lp.status != LpStatus::Optimal {
        return Err(Error::Numerical(format!("pairwise transport LP ended with {:?}", lp.status)));
    }
    let shift = lp.duals[0];
    let phi = lp.duals[..np].iter().map(|v| v - shift).collect();
    let psi = lp.duals[np..].iter().map(|v| v + shift).collect();
    Ok((phi, psi))
}

/// Read the dual certificate off a converged conic solution.
///
/// `tolerance` is the solver tolerance; pairwise dual infeasibility beyond ten
/// times that (relative to the cost scale) is reported as an error. A solution
/// stopped by the iteration cap is accepted if its residuals already meet
/// `tolerance`.
pub fn extract_certificate(
    sol: &ConicSolution,
    relax: &Relaxation,
    cost: &PairwiseCost,
    tolerance: f64,
) -> Result<DualCertificate> {
    let inexact = sol.status == SolveStatus::MaxIterations && sol.residuals.max() <= tolerance;
    if sol.status != SolveStatus::Converged && !inexact {
        return Err(Error::NotConverged {
            iterations: sol.iterations,
            primal: sol.residuals.primal,
            dual: sol.residuals.dual,
            gap: sol.residuals.gap,
        });
    }
    let cert = raw_certificate(sol, relax);
    let scale = 1.0 + cost.dense().amax();
    let viol = cert.potential_violation(cost);
    if viol > 10.0 * tolerance * scale {
        return Err(Error::Certificate(format!(
            "pairwise dual constraints violated by {viol:.3e} (tolerance {tolerance:.1e})"
        )));
    }
    let min_eig = cert.min_eigenvalue();
    if min_eig < -10.0 * tolerance * scale {
        return Err(Error::Certificate(format!("Y has eigenvalue {min_eig:.3e}")));
    }
    Ok(cert)
}

pub(crate) fn raw_certificate(sol: &ConicSolution, relax: &Relaxation) -> DualCertificate {
    let l = relax.sizes.len();
    let y = smat(&sol.s[relax.psd.range()], relax.psd.side);
    let mut phi = Vec::with_capacity(relax.row_sum_rows.len());
    let mut psi = Vec::with_capacity(relax.col_sum_rows.len());
    for p in 0..l {
        for q in p + 1..l {
            let k = pair_index(l, p, q);
            phi.push((0..relax.sizes[p]).map(|a| 0.5 * sol.y[relax.row_sum_rows[k] + a]).collect());
            psi.push((0..relax.sizes[q]).map(|b| 0.5 * sol.y[relax.col_sum_rows[k] + b]).collect());
        }
    }
    let consistency = (relax.order == RelaxationOrder::Three).then(|| {
        let mut acc: Vec<DMatrix<f64>> = (0..l)
            .flat_map(|p| (p + 1..l).map(move |q| (p, q)))
            .map(|(p, q)| DMatrix::zeros(relax.sizes[p], relax.sizes[q]))
            .collect();
        for (t, &[p, q, r]) in relax.triples.iter().enumerate() {
            let starts = relax.consistency_rows[t];
            for (g, (u, v)) in [(p, q), (p, r), (q, r)].into_iter().enumerate() {
                let k = pair_index(l, u, v);
                let nv = relax.sizes[v];
                for a in 0..relax.sizes[u] {
                    for b in 0..nv {
                        acc[k][(a, b)] += 0.5 * sol.y[starts[g] + a * nv + b];
                    }
                }
            }
        }
        acc
    });
    let offsets = relax.offsets.clone();
    DualCertificate { sizes: relax.sizes.clone(), offsets, y: (&y + y.transpose()) * 0.5, phi, psi, consistency }
}

/// SCE potential from a certificate over binary marginals:
/// `∂E/∂ρ_r = 2 Σ_{q>r} [φ_rq(1) − φ_rq(0)] + 2 Σ_{p<r} [ψ_pr(1) − ψ_pr(0)] − [Y_rr(1,1) − Y_rr(0,0)]`.
pub fn sdp_gradient(cert: &DualCertificate) -> Result<Vec<f64>> {
    if cert.sizes.iter().any(|&n| n != 2) {
        return Err(Error::NonBinary);
    }
    let l = cert.sizes.len();
    Ok((0..l)
        .map(|r| {
            let mut g = 0.0;
            for p in 0..l {
                if p != r {
                    let f = cert.phi(r, p);
                    g += 2.0 * (f[1] - f[0]);
                }
            }
            let o = cert.offsets[r];
            g - (cert.y[(o + 1, o + 1)] - cert.y[(o, o)])
        })
        .collect())
}

/// `Σ_i y_i ∂b_i/∂ρ_r` straight from the conic multipliers (binary marginals).
/// Valid for either relaxation order.
pub fn envelope_gradient(sol: &ConicSolution, relax: &Relaxation) -> Result<Vec<f64>> {
    if relax.sizes.iter().any(|&n| n != 2) {
        return Err(Error::NonBinary);
    }
    let l = relax.sizes.len();
    let mut g = vec![0.0; l];
    for (r, rows) in relax.pin_rows.iter().enumerate() {
        for &(a, b, row) in rows {
            if a == b {
                g[r] += sol.y[row] * if a == 1 { 1.0 } else { -1.0 };
            }
        }
    }
    for p in 0..l {
        for q in p + 1..l {
            let k = pair_index(l, p, q);
            g[p] += sol.y[relax.row_sum_rows[k] + 1] - sol.y[relax.row_sum_rows[k]];
            g[q] += sol.y[relax.col_sum_rows[k] + 1] - sol.y[relax.col_sum_rows[k]];
        }
    }
    Ok(g)
}
