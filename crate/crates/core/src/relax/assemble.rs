//! Conic formulations of the 2- and 3-marginal relaxations.
//!
//! Variables: the moment matrix `M` (one PSD block of side `N_tot`), a
//! nonnegative copy `N_pq` of every off-diagonal block `M_pq` (`p < q`), and for
//! the 3-marginal version one nonnegative block `K_pqr` per triple `p < q < r`.
//! Rows: diagonal-block pins, copy links `N_pq − M_pq = 0`, row and column sums
//! of `N_pq`, and (3-marginal) partial sums of `K_pqr` equal to the pair copies.

use crate::conic::{ConicProblem, PsdBlock};
use crate::error::{Error, Result};
use crate::mmot::{offsets, pair_index, MarginalSet, PairwiseCost};

use super::{MomentMatrix, RelaxationOrder, ThreeMarginalTensor};

/// Largest number of scalar 3-marginal variables assembled.
pub const MAX_TRIPLE_VARS: usize = 4_000_000;

/// A relaxation together with the index bookkeeping needed to read results back.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub(crate) order: RelaxationOrder,
    pub(crate) sizes: Vec<usize>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) problem: ConicProblem,
    pub(crate) psd: PsdBlock,
    pub(crate) pair_vars: Vec<usize>,
    pub(crate) triples: Vec<[usize; 3]>,
    pub(crate) triple_vars: Vec<usize>,
    /// Per site: `(a, b, row)` for the pinned entries `M_pp(a, b)`, `a ≥ b`.
    pub(crate) pin_rows: Vec<Vec<(usize, usize, usize)>>,
    pub(crate) row_sum_rows: Vec<usize>,
    pub(crate) col_sum_rows: Vec<usize>,
    /// Per triple: first row of the consistency groups for pairs (p,q), (p,r), (q,r).
    pub(crate) consistency_rows: Vec<[usize; 3]>,
}

/// The 2-marginal relaxation: `M ⪰ 0`, `M_pq ≥ 0`, marginal row and column
/// sums for `p < q`, `M_pp = diag(μ_p)`, objective `Tr(CM)`.
pub fn assemble_two_marginal(c: &PairwiseCost, m: &MarginalSet) -> Result<Relaxation> {
    assemble(c, m, RelaxationOrder::Two)
}

/// The 2-marginal relaxation tightened by nonnegative 3-marginals whose pair
/// sums reproduce every off-diagonal block.
pub fn assemble_three_marginal(c: &PairwiseCost, m: &MarginalSet) -> Result<Relaxation> {
    assemble(c, m, RelaxationOrder::Three)
}

pub(crate) fn assemble(c: &PairwiseCost, m: &MarginalSet, order: RelaxationOrder) -> Result<Relaxation> {
    c.check_compatible(m)?;
    let sizes = m.sizes();
    let l = sizes.len();
    let offs = offsets(&sizes);
    let ntot: usize = sizes.iter().sum();

    let mut b = ConicProblem::builder();
    let psd = b.psd(ntot);
    let mut pair_vars = Vec::with_capacity(l * l.saturating_sub(1) / 2);
    for p in 0..l {
        for q in p + 1..l {
            pair_vars.push(b.nonneg(sizes[p] * sizes[q]).start);
        }
    }
    let mut triples = Vec::new();
    let mut triple_vars = Vec::new();
    if order == RelaxationOrder::Three {
        let total: usize = (0..l)
            .flat_map(|p| (p + 1..l).flat_map(move |q| (q + 1..l).map(move |r| (p, q, r))))
            .map(|(p, q, r)| sizes[p] * sizes[q] * sizes[r])
            .sum();
        if total > MAX_TRIPLE_VARS {
            return Err(Error::TooLarge { what: "3-marginal variables", size: total as u128, limit: MAX_TRIPLE_VARS as u128 });
        }
        for p in 0..l {
            for q in p + 1..l {
                for r in q + 1..l {
                    triples.push([p, q, r]);
                    triple_vars.push(b.nonneg(sizes[p] * sizes[q] * sizes[r]).start);
                }
            }
        }
    }

    // objective Tr(CM) = 2 Σ_{p<q} ⟨C_pq, M_pq⟩ on the scaled off-diagonal coordinates
    for p in 0..l {
        for q in p + 1..l {
            let blk = c.block(p, q);
            for a in 0..sizes[p] {
                for bb in 0..sizes[q] {
                    let v = blk[(a, bb)];
                    if v != 0.0 {
                        let (k, f) = psd.entry(offs[p] + a, offs[q] + bb);
                        b.add_objective(k, 2.0 * v * f);
                    }
                }
            }
        }
    }

    let mut pin_rows = Vec::with_capacity(l);
    for p in 0..l {
        let mut rows = Vec::new();
        for a in 0..sizes[p] {
            for bb in 0..=a {
                let (k, _) = psd.entry(offs[p] + a, offs[p] + bb);
                let target = if a == bb { m.marginal(p)[a] } else { 0.0 };
                rows.push((a, bb, b.add_row(&[(k, 1.0)], target)));
            }
        }
        pin_rows.push(rows);
    }

    for p in 0..l {
        for q in p + 1..l {
            let start = pair_vars[pair_index(l, p, q)];
            for a in 0..sizes[p] {
                for bb in 0..sizes[q] {
                    let (k, f) = psd.entry(offs[p] + a, offs[q] + bb);
                    b.add_row(&[(start + a * sizes[q] + bb, 1.0), (k, -f)], 0.0);
                }
            }
        }
    }

    let mut row_sum_rows = Vec::new();
    let mut col_sum_rows = Vec::new();
    for p in 0..l {
        for q in p + 1..l {
            let start = pair_vars[pair_index(l, p, q)];
            let (np, nq) = (sizes[p], sizes[q]);
            row_sum_rows.push(b.num_rows());
            for a in 0..np {
                let terms: Vec<_> = (0..nq).map(|bb| (start + a * nq + bb, 1.0)).collect();
                b.add_row(&terms, m.marginal(p)[a]);
            }
            col_sum_rows.push(b.num_rows());
            for bb in 0..nq {
                let terms: Vec<_> = (0..np).map(|a| (start + a * nq + bb, 1.0)).collect();
                b.add_row(&terms, m.marginal(q)[bb]);
            }
        }
    }

    let mut consistency_rows = Vec::new();
    for (t, &[p, q, r]) in triples.iter().enumerate() {
        let kstart = triple_vars[t];
        let (np, nq, nr) = (sizes[p], sizes[q], sizes[r]);
        let kidx = |a: usize, bb: usize, cc: usize| kstart + (a * nq + bb) * nr + cc;
        let mut starts = [0; 3];
        // (p,q): sum over r
        starts[0] = b.num_rows();
        let npq = pair_vars[pair_index(l, p, q)];
        for a in 0..np {
            for bb in 0..nq {
                let mut terms = vec![(npq + a * nq + bb, 1.0)];
                terms.extend((0..nr).map(|cc| (kidx(a, bb, cc), -1.0)));
                b.add_row(&terms, 0.0);
            }
        }
        starts[1] = b.num_rows();
        let npr = pair_vars[pair_index(l, p, r)];
        for a in 0..np {
            for cc in 0..nr {
                let mut terms = vec![(npr + a * nr + cc, 1.0)];
                terms.extend((0..nq).map(|bb| (kidx(a, bb, cc), -1.0)));
                b.add_row(&terms, 0.0);
            }
        }
        starts[2] = b.num_rows();
        let nqr = pair_vars[pair_index(l, q, r)];
        for bb in 0..nq {
            for cc in 0..nr {
                let mut terms = vec![(nqr + bb * nr + cc, 1.0)];
                terms.extend((0..np).map(|a| (kidx(a, bb, cc), -1.0)));
                b.add_row(&terms, 0.0);
            }
        }
        consistency_rows.push(starts);
    }

    Ok(Relaxation {
        order,
        sizes,
        offsets: offs,
        problem: b.build()?,
        psd,
        pair_vars,
        triples,
        triple_vars,
        pin_rows,
        row_sum_rows,
        col_sum_rows,
        consistency_rows,
    })
}

impl Relaxation {
    pub fn problem(&self) -> &ConicProblem {
        &self.problem
    }

    /// Variable scaling that brings every entry of a feasible point to order
    /// one: `M(i, j)` is divided by `√(μ_i μ_j)`, the pair copies alike, and each
    /// 3-marginal entry by the geometric mean of its three state masses.
    pub fn variable_scaling(&self, m: &MarginalSet) -> Vec<f64> {
        let l = self.sizes.len();
        let d: Vec<f64> = (0..l).flat_map(|p| m.marginal(p).iter().map(|v| v.sqrt())).collect();
        let mut e = vec![1.0; self.problem.num_vars()];
        let n = d.len();
        for j in 0..n {
            for i in j..n {
                e[self.psd.entry(i, j).0] = d[i] * d[j];
            }
        }
        for p in 0..l {
            for q in p + 1..l {
                let start = self.pair_vars[pair_index(l, p, q)];
                let nq = self.sizes[q];
                for a in 0..self.sizes[p] {
                    for bb in 0..nq {
                        e[start + a * nq + bb] = d[self.offsets[p] + a] * d[self.offsets[q] + bb];
                    }
                }
            }
        }
        for (t, &[p, q, r]) in self.triples.iter().enumerate() {
            let start = self.triple_vars[t];
            let (nq, nr) = (self.sizes[q], self.sizes[r]);
            for a in 0..self.sizes[p] {
                for bb in 0..nq {
                    for cc in 0..nr {
                        let g = d[self.offsets[p] + a] * d[self.offsets[q] + bb] * d[self.offsets[r] + cc];
                        e[start + (a * nq + bb) * nr + cc] = g.powf(2.0 / 3.0);
                    }
                }
            }
        }
        e
    }

    pub fn order(&self) -> RelaxationOrder {
        self.order
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_sites(&self) -> usize {
        self.sizes.len()
    }

    /// Right-hand side for new marginals of the same state sizes.
    pub fn rhs_for(&self, m: &MarginalSet) -> Result<Vec<f64>> {
        if m.sizes() != self.sizes {
            return Err(Error::DimensionMismatch(format!(
                "marginal sizes {:?} differ from assembled sizes {:?}",
                m.sizes(),
                self.sizes
            )));
        }
        let l = self.sizes.len();
        let mut rhs = vec![0.0; self.problem.num_rows()];
        for (p, rows) in self.pin_rows.iter().enumerate() {
            for &(a, b, row) in rows {
                if a == b {
                    rhs[row] = m.marginal(p)[a];
                }
            }
        }
        for p in 0..l {
            for q in p + 1..l {
                let k = pair_index(l, p, q);
                for a in 0..self.sizes[p] {
                    rhs[self.row_sum_rows[k] + a] = m.marginal(p)[a];
                }
                for b in 0..self.sizes[q] {
                    rhs[self.col_sum_rows[k] + b] = m.marginal(q)[b];
                }
            }
        }
        Ok(rhs)
    }

    /// Replace the marginals in place (the constraint matrix is unchanged).
    pub fn set_marginals(&mut self, m: &MarginalSet) -> Result<()> {
        let rhs = self.rhs_for(m)?;
        self.problem.set_rhs(rhs)
    }

    /// Moment matrix stored in a primal vector.
    pub fn moment_matrix(&self, x: &[f64]) -> MomentMatrix {
        let m = crate::conic::smat(&x[self.psd.range()], self.psd.side);
        MomentMatrix::from_dense(self.sizes.clone(), m).expect("sizes match by construction")
    }

    /// 3-marginal blocks stored in a primal vector (3-marginal relaxation only).
    pub fn three_marginals(&self, x: &[f64]) -> Option<ThreeMarginalTensor> {
        (self.order == RelaxationOrder::Three).then(|| {
            let blocks = self
                .triples
                .iter()
                .zip(&self.triple_vars)
                .map(|(&[p, q, r], &start)| x[start..start + self.sizes[p] * self.sizes[q] * self.sizes[r]].to_vec())
                .collect();
            ThreeMarginalTensor::from_blocks(self.sizes.clone(), blocks).expect("sizes match by construction")
        })
    }
}
