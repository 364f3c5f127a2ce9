//! Semidefinite relaxations of pairwise-cost MMOT.
//!
//! The 2-marginal relaxation replaces the joint measure by its block matrix of
//! 1- and 2-marginals `M`, constrained to be PSD, entrywise nonnegative off the
//! diagonal blocks and locally consistent with the fixed 1-marginals. The
//! 3-marginal relaxation adds nonnegative 3-marginals whose partial sums
//! reproduce `M`. Both give lower bounds on the exact transport value, and the
//! dual multipliers provide the SCE potential.

mod assemble;
mod certificate;
mod diagnostics;
mod solve;

pub use assemble::{assemble_three_marginal, assemble_two_marginal, Relaxation, MAX_TRIPLE_VARS};
pub use certificate::{envelope_gradient, extract_certificate, sdp_gradient, DualCertificate};
pub use diagnostics::{check_primal_feasibility, FeasibilityReport};
pub use solve::{solve_relaxation, RelaxationResult, RelaxationSolver};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mmot::{offsets, JointMeasure, PairwiseCost};

/// Which relaxation to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelaxationOrder {
    Two,
    Three,
}

/// Symmetric block matrix with blocks `M_pq` of size `N_p × N_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    m: DMatrix<f64>,
}

impl MomentMatrix {
    pub fn from_dense(sizes: Vec<usize>, m: DMatrix<f64>) -> Result<Self> {
        let n: usize = sizes.iter().sum();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "moment matrix is {}x{} but the state sizes add up to {n}",
                m.nrows(),
                m.ncols()
            )));
        }
        let offsets = offsets(&sizes);
        Ok(MomentMatrix { sizes, offsets, m })
    }

    /// Moment matrix of a joint measure: 2-marginals off the diagonal,
    /// `diag(μ_p)` on it.
    pub fn from_joint(mu: &JointMeasure) -> Result<Self> {
        let sizes = mu.sizes().to_vec();
        let l = sizes.len();
        let offs = offsets(&sizes);
        let n: usize = sizes.iter().sum();
        let mut m = DMatrix::zeros(n, n);
        for p in 0..l {
            let one = mu.marginalize(&[p])?;
            for a in 0..sizes[p] {
                m[(offs[p] + a, offs[p] + a)] = one.values[a];
            }
            for q in p + 1..l {
                let two = mu.marginalize(&[p, q])?.as_matrix().expect("two sites");
                m.view_mut((offs[p], offs[q]), (sizes[p], sizes[q])).copy_from(&two);
                m.view_mut((offs[q], offs[p]), (sizes[q], sizes[p])).copy_from(&two.transpose());
            }
        }
        Ok(MomentMatrix { sizes, offsets: offs, m })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn block(&self, p: usize, q: usize) -> DMatrix<f64> {
        self.m.view((self.offsets[p], self.offsets[q]), (self.sizes[p], self.sizes[q])).into_owned()
    }

    /// `Tr(CM) = Σ_{p≠q} ⟨C_pq, M_pq⟩`.
    pub fn objective(&self, c: &PairwiseCost) -> f64 {
        let l = self.sizes.len();
        let mut total = 0.0;
        for p in 0..l {
            for q in p + 1..l {
                total += 2.0 * c.block(p, q).component_mul(&self.block(p, q)).sum();
            }
        }
        total
    }

    /// Columns `e_1 − e_q` (`q ≥ 2`) of block indicator differences, which span
    /// a subspace annihilated by every feasible moment matrix.
    pub fn difference_matrix(sizes: &[usize]) -> DMatrix<f64> {
        let offs = offsets(sizes);
        let n: usize = sizes.iter().sum();
        let l = sizes.len();
        let mut p = DMatrix::zeros(n, l.saturating_sub(1));
        for q in 1..l {
            for a in 0..sizes[0] {
                p[(a, q - 1)] = 1.0;
            }
            for a in 0..sizes[q] {
                p[(offs[q] + a, q - 1)] = -1.0;
            }
        }
        p
    }
}

/// Nonnegative 3-marginal blocks `K_pqr`, stored once per triple `p < q < r`
/// in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeMarginalTensor {
    sizes: Vec<usize>,
    index: Vec<usize>,
    blocks: Vec<Vec<f64>>,
}

impl ThreeMarginalTensor {
    pub fn from_blocks(sizes: Vec<usize>, blocks: Vec<Vec<f64>>) -> Result<Self> {
        let l = sizes.len();
        let mut index = vec![usize::MAX; l * l * l];
        let mut t = 0;
        for p in 0..l {
            for q in p + 1..l {
                for r in q + 1..l {
                    let want = sizes[p] * sizes[q] * sizes[r];
                    match blocks.get(t) {
                        Some(b) if b.len() == want => {}
                        _ => {
                            return Err(Error::DimensionMismatch(format!(
                                "3-marginal block for ({p}, {q}, {r}) must have {want} entries"
                            )))
                        }
                    }
                    index[(p * l + q) * l + r] = t;
                    t += 1;
                }
            }
        }
        if t != blocks.len() {
            return Err(Error::DimensionMismatch(format!("{} blocks for {t} triples", blocks.len())));
        }
        Ok(ThreeMarginalTensor { sizes, index, blocks })
    }

    /// 3-marginals of a joint measure.
    pub fn from_joint(mu: &JointMeasure) -> Result<Self> {
        let l = mu.sizes().len();
        let mut blocks = Vec::new();
        for p in 0..l {
            for q in p + 1..l {
                for r in q + 1..l {
                    blocks.push(mu.marginalize(&[p, q, r])?.values);
                }
            }
        }
        ThreeMarginalTensor::from_blocks(mu.sizes().to_vec(), blocks)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `K_pqr(a, b, c)` for any three distinct sites in any order.
    pub fn get(&self, sites: [usize; 3], states: [usize; 3]) -> f64 {
        let mut order = [0usize, 1, 2];
        order.sort_by_key(|&i| sites[i]);
        let [i, j, k] = order;
        let (p, q, r) = (sites[i], sites[j], sites[k]);
        assert!(p < q && q < r, "sites must be distinct");
        let l = self.sizes.len();
        let t = self.index[(p * l + q) * l + r];
        let (nq, nr) = (self.sizes[q], self.sizes[r]);
        self.blocks[t][(states[i] * nq + states[j]) * nr + states[k]]
    }

    /// Number of stored triples.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub(crate) fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(rng: &mut ChaCha8Rng, sizes: Vec<usize>) -> JointMeasure {
        let n: usize = sizes.iter().product();
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        JointMeasure::new(sizes, w).unwrap()
    }

    #[test]
    fn permuted_views_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_joint(&mut rng, vec![2, 3, 2, 2]);
        let k = ThreeMarginalTensor::from_joint(&mu).unwrap();
        for (sites, states) in [([0, 1, 3], [1, 2, 0]), ([2, 1, 0], [1, 0, 1]), ([3, 0, 2], [0, 1, 1])] {
            let direct = mu.marginalize(&sites).unwrap().get(&states);
            assert!((k.get(sites, states) - direct).abs() < 1e-15);
        }
        // simultaneous permutation of sites and states
        assert_eq!(k.get([0, 1, 2], [1, 2, 0]), k.get([2, 0, 1], [0, 1, 2]));
    }

    #[test]
    fn joint_moment_matrix_is_annihilated_by_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = random_joint(&mut rng, vec![2, 2, 3, 2]);
        let m = MomentMatrix::from_joint(&mu).unwrap();
        let p = MomentMatrix::difference_matrix(m.sizes());
        assert!((m.matrix() * p).norm() < 1e-14);
    }
}
