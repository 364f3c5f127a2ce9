//! Primal feasibility checks for moment matrices and 3-marginal blocks.

use crate::conic::min_eigenvalue;
use crate::error::{Error, Result};
use crate::mmot::MarginalSet;

use super::{MomentMatrix, ThreeMarginalTensor};

/// Absolute violations of each relaxation constraint; all zero for an exactly
/// feasible point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeasibilityReport {
    /// `max(0, −λ_min(M))`.
    pub psd_violation: f64,
    /// Most negative entry of an off-diagonal block, as a positive number.
    pub negativity: f64,
    /// Worst deviation of `M_pq 1` from `μ_p`.
    pub row_sum_error: f64,
    /// Worst deviation of `M_pqᵀ 1` from `μ_q`.
    pub col_sum_error: f64,
    /// Worst deviation of `M_pp` from `diag(μ_p)`.
    pub diagonal_error: f64,
    pub asymmetry: f64,
    /// `‖MP‖_F` for the block indicator differences `P`.
    pub annihilation: f64,
    pub frobenius_norm: f64,
    /// Most negative 3-marginal entry, as a positive number.
    pub three_negativity: f64,
    /// Worst deviation between partial sums of `K` and the blocks of `M`.
    pub three_consistency: f64,
}

impl FeasibilityReport {
    /// Largest violation over the hard constraints (excludes the diagnostic
    /// `‖MP‖_F` and norm fields).
    pub fn max_violation(&self) -> f64 {
        [
            self.psd_violation,
            self.negativity,
            self.row_sum_error,
            self.col_sum_error,
            self.diagonal_error,
            self.asymmetry,
            self.three_negativity,
            self.three_consistency,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Measure how far `(M, K)` is from satisfying the relaxation constraints for
/// marginals `m`.
pub fn check_primal_feasibility(
    moments: &MomentMatrix,
    three: Option<&ThreeMarginalTensor>,
    m: &MarginalSet,
) -> Result<FeasibilityReport> {
    let sizes = moments.sizes();
    if sizes != m.sizes() {
        return Err(Error::DimensionMismatch(format!(
            "moment matrix sizes {sizes:?} do not match marginal sizes {:?}",
            m.sizes()
        )));
    }
    if let Some(k) = three {
        if k.sizes() != sizes {
            return Err(Error::DimensionMismatch("3-marginal sizes do not match".into()));
        }
    }
    let l = sizes.len();
    let full = moments.matrix();
    let mut rep = FeasibilityReport {
        asymmetry: (full - full.transpose()).amax(),
        frobenius_norm: full.norm(),
        ..Default::default()
    };
    let sym = (full + full.transpose()) * 0.5;
    rep.psd_violation = (-min_eigenvalue(&sym)).max(0.0);
    rep.annihilation = (full * MomentMatrix::difference_matrix(sizes)).norm();

    for p in 0..l {
        let d = moments.block(p, p);
        for a in 0..sizes[p] {
            for b in 0..sizes[p] {
                let want = if a == b { m.marginal(p)[a] } else { 0.0 };
                rep.diagonal_error = rep.diagonal_error.max((d[(a, b)] - want).abs());
            }
        }
        for q in p + 1..l {
            let blk = moments.block(p, q);
            rep.negativity = rep.negativity.max(-blk.min());
            for a in 0..sizes[p] {
                let err = (blk.row(a).sum() - m.marginal(p)[a]).abs();
                rep.row_sum_error = rep.row_sum_error.max(err);
            }
            for b in 0..sizes[q] {
                let err = (blk.column(b).sum() - m.marginal(q)[b]).abs();
                rep.col_sum_error = rep.col_sum_error.max(err);
            }
        }
    }

    if let Some(k) = three {
        for block in k.blocks() {
            for &v in block {
                rep.three_negativity = rep.three_negativity.max(-v);
            }
        }
        for p in 0..l {
            for q in p + 1..l {
                for r in q + 1..l {
                    for (u, v, w) in [(p, q, r), (p, r, q), (q, r, p)] {
                        let blk = moments.block(u, v);
                        for a in 0..sizes[u] {
                            for b in 0..sizes[v] {
                                let s: f64 = (0..sizes[w]).map(|c| k.get([u, v, w], [a, b, c])).sum();
                                rep.three_consistency = rep.three_consistency.max((s - blk[(a, b)]).abs());
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(rep)
}
