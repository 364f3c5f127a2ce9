//! Multi-marginal optimal transport with pairwise costs.
//!
//! A [`JointMeasure`] is a probability tensor over the product of per-site state
//! spaces; its objective under a [`PairwiseCost`] is `Σ_{p≠q} ⟨C_pq, μ_pq⟩`
//! (ordered pairs, so each unordered pair is counted twice).

mod exact;

pub use exact::{grad_from_lp_dual, solve_exact_mmot, MmotResult};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;
/// Largest joint state space held densely.
pub const MAX_JOINT_STATES: usize = 1 << 20;

/// One-site marginals `μ_p` of sizes `N_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    marginals: Vec<Vec<f64>>,
}

impl MarginalSet {
    pub fn new(marginals: Vec<Vec<f64>>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidArgument("no sites".into()));
        }
        for (p, m) in marginals.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::InvalidArgument(format!("site {p} has an empty state space")));
            }
            if m.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::InvalidArgument(format!("site {p} has a negative or non-finite weight")));
            }
            let s: f64 = m.iter().sum();
            if (s - 1.0).abs() > MASS_TOL {
                return Err(Error::NotNormalized(s));
            }
        }
        Ok(MarginalSet { marginals })
    }

    /// Binary marginals `(1 − ρ_p, ρ_p)` of an occupation density.
    pub fn from_density(rho: &[f64]) -> Result<Self> {
        if let Some((p, r)) = rho.iter().enumerate().find(|(_, r)| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidArgument(format!("density {r} at site {p} outside [0, 1]")));
        }
        MarginalSet::new(rho.iter().map(|&r| vec![1.0 - r, r]).collect())
    }

    pub fn num_sites(&self) -> usize {
        self.marginals.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.marginals.iter().map(Vec::len).collect()
    }

    /// `N_tot = Σ N_p`.
    pub fn total_size(&self) -> usize {
        self.marginals.iter().map(Vec::len).sum()
    }

    pub fn marginal(&self, p: usize) -> &[f64] {
        &self.marginals[p]
    }

    pub fn is_binary(&self) -> bool {
        self.marginals.iter().all(|m| m.len() == 2)
    }

    /// Occupations `ρ_p = μ_p(1)` when every site is binary.
    pub fn density(&self) -> Option<Vec<f64>> {
        self.is_binary().then(|| self.marginals.iter().map(|m| m[1]).collect())
    }
}

/// Index of the unordered pair `p < q` among `l` sites.
pub(crate) fn pair_index(l: usize, p: usize, q: usize) -> usize {
    debug_assert!(p < q && q < l);
    p * l - p * (p + 1) / 2 + (q - p - 1)
}

/// Cost blocks `C_pq` (`N_p × N_q`) with `C_qp = C_pqᵀ` and `C_pp = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseCost {
    sizes: Vec<usize>,
    blocks: Vec<DMatrix<f64>>,
}

impl PairwiseCost {
    /// All-zero cost over the given state-space sizes.
    pub fn zeros(sizes: &[usize]) -> Self {
        let l = sizes.len();
        let mut blocks = Vec::with_capacity(l * l.saturating_sub(1) / 2);
        for p in 0..l {
            for q in p + 1..l {
                blocks.push(DMatrix::zeros(sizes[p], sizes[q]));
            }
        }
        PairwiseCost { sizes: sizes.to_vec(), blocks }
    }

    /// Set `C_pq` (and implicitly `C_qp = C_pqᵀ`).
    pub fn set_block(&mut self, p: usize, q: usize, block: DMatrix<f64>) -> Result<()> {
        let l = self.sizes.len();
        if p == q || p >= l || q >= l {
            return Err(Error::InvalidArgument(format!("invalid site pair ({p}, {q})")));
        }
        let (a, b, blk) = if p < q { (p, q, block) } else { (q, p, block.transpose()) };
        if blk.nrows() != self.sizes[a] || blk.ncols() != self.sizes[b] {
            return Err(Error::DimensionMismatch(format!(
                "block for ({p}, {q}) must be {}x{}",
                self.sizes[p], self.sizes[q]
            )));
        }
        self.blocks[pair_index(l, a, b)] = blk;
        Ok(())
    }

    pub fn num_sites(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `C_pq` for any ordered pair (zero when `p = q`).
    pub fn block(&self, p: usize, q: usize) -> DMatrix<f64> {
        let l = self.sizes.len();
        match p.cmp(&q) {
            std::cmp::Ordering::Equal => DMatrix::zeros(self.sizes[p], self.sizes[p]),
            std::cmp::Ordering::Less => self.blocks[pair_index(l, p, q)].clone(),
            std::cmp::Ordering::Greater => self.blocks[pair_index(l, q, p)].transpose(),
        }
    }

    /// Entry `C_pq(a, b)` without materializing the block.
    pub fn entry(&self, p: usize, q: usize, a: usize, b: usize) -> f64 {
        let l = self.sizes.len();
        match p.cmp(&q) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.blocks[pair_index(l, p, q)][(a, b)],
            std::cmp::Ordering::Greater => self.blocks[pair_index(l, q, p)][(b, a)],
        }
    }

    /// Joint cost `C(s) = Σ_{p≠q} C_pq(s_p, s_q)` of a configuration.
    pub fn evaluate(&self, s: &[usize]) -> f64 {
        let l = self.sizes.len();
        let mut total = 0.0;
        for p in 0..l {
            for q in p + 1..l {
                total += self.blocks[pair_index(l, p, q)][(s[p], s[q])];
            }
        }
        2.0 * total
    }

    /// The full `N_tot × N_tot` block matrix with blocks `C_pq`.
    pub fn dense(&self) -> DMatrix<f64> {
        let offsets = offsets(&self.sizes);
        let n: usize = self.sizes.iter().sum();
        let mut m = DMatrix::zeros(n, n);
        for p in 0..self.sizes.len() {
            for q in 0..self.sizes.len() {
                if p != q {
                    m.view_mut((offsets[p], offsets[q]), (self.sizes[p], self.sizes[q]))
                        .copy_from(&self.block(p, q));
                }
            }
        }
        m
    }

    pub(crate) fn check_compatible(&self, m: &MarginalSet) -> Result<()> {
        if self.sizes != m.sizes() {
            return Err(Error::DimensionMismatch(format!(
                "cost state sizes {:?} differ from marginal sizes {:?}",
                self.sizes,
                m.sizes()
            )));
        }
        Ok(())
    }
}

pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut o = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        o.push(acc);
        acc += s;
    }
    o
}

/// Binary cost with `C_pq(1,1) = v_pq` and all other entries zero.
pub fn cost_from_interaction(v: &DMatrix<f64>) -> Result<PairwiseCost> {
    let l = v.nrows();
    if v.ncols() != l {
        return Err(Error::DimensionMismatch(format!("interaction matrix is {}x{}", l, v.ncols())));
    }
    let asym = (v - v.transpose()).amax();
    if asym > 1e-12 * v.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    if v.diagonal().amax() != 0.0 {
        return Err(Error::InvalidArgument("interaction matrix must have a zero diagonal".into()));
    }
    let mut c = PairwiseCost::zeros(&vec![2; l]);
    for p in 0..l {
        for q in p + 1..l {
            c.blocks[pair_index(l, p, q)][(1, 1)] = v[(p, q)];
        }
    }
    Ok(c)
}

/// A probability tensor over `Π N_p` configurations, stored row-major with the
/// last site varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMeasure {
    sizes: Vec<usize>,
    weights: Vec<f64>,
}

/// A marginal of a [`JointMeasure`] over an ordered subset of sites, stored
/// row-major in the order the sites were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTensor {
    pub sites: Vec<usize>,
    pub sizes: Vec<usize>,
    pub values: Vec<f64>,
}

impl MarginalTensor {
    pub fn get(&self, idx: &[usize]) -> f64 {
        let k = idx.iter().zip(&self.sizes).fold(0, |k, (&i, &n)| k * n + i);
        self.values[k]
    }

    /// The two-site case as an `N_p × N_q` matrix.
    pub fn as_matrix(&self) -> Option<DMatrix<f64>> {
        (self.sizes.len() == 2).then(|| DMatrix::from_row_slice(self.sizes[0], self.sizes[1], &self.values))
    }
}

pub(crate) fn joint_len(sizes: &[usize]) -> Result<usize> {
    let mut n: usize = 1;
    for &s in sizes {
        n = n.checked_mul(s).filter(|&n| n <= MAX_JOINT_STATES).ok_or(Error::TooLarge {
            what: "joint state space",
            size: sizes.iter().map(|&s| s as u128).product(),
            limit: MAX_JOINT_STATES as u128,
        })?;
    }
    Ok(n)
}

/// Mixed-radix decoding of a row-major index (last coordinate fastest).
pub(crate) fn decode(mut k: usize, sizes: &[usize], out: &mut [usize]) {
    for (o, &n) in out.iter_mut().zip(sizes).rev() {
        *o = k % n;
        k /= n;
    }
}

impl JointMeasure {
    pub fn new(sizes: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let n = joint_len(&sizes)?;
        if weights.len() != n {
            return Err(Error::DimensionMismatch(format!("{} weights for {n} configurations", weights.len())));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidArgument("joint weights must be finite and nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(s));
        }
        Ok(JointMeasure { sizes, weights })
    }

    /// The product measure of the given marginals.
    pub fn product(m: &MarginalSet) -> Result<Self> {
        let sizes = m.sizes();
        let n = joint_len(&sizes)?;
        let mut s = vec![0; sizes.len()];
        let weights = (0..n)
            .map(|k| {
                decode(k, &sizes, &mut s);
                s.iter().enumerate().map(|(p, &a)| m.marginal(p)[a]).product()
            })
            .collect();
        Ok(JointMeasure { sizes, weights })
    }

    /// Point mass at configuration `s`.
    pub fn dirac(sizes: Vec<usize>, s: &[usize]) -> Result<Self> {
        let n = joint_len(&sizes)?;
        if s.len() != sizes.len() || s.iter().zip(&sizes).any(|(&a, &n)| a >= n) {
            return Err(Error::InvalidArgument(format!("configuration {s:?} outside {sizes:?}")));
        }
        let mut weights = vec![0.0; n];
        weights[s.iter().zip(&sizes).fold(0, |k, (&a, &n)| k * n + a)] = 1.0;
        Ok(JointMeasure { sizes, weights })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sum out every site not in `sites` (1 to 3 distinct sites).
    pub fn marginalize(&self, sites: &[usize]) -> Result<MarginalTensor> {
        let l = self.sizes.len();
        if sites.is_empty() || sites.len() > 3 {
            return Err(Error::InvalidArgument(format!("marginals over {} sites are not supported", sites.len())));
        }
        for (i, &p) in sites.iter().enumerate() {
            if p >= l {
                return Err(Error::InvalidArgument(format!("site {p} out of range")));
            }
            if sites[..i].contains(&p) {
                return Err(Error::InvalidArgument(format!("site {p} repeated")));
            }
        }
        let sizes: Vec<usize> = sites.iter().map(|&p| self.sizes[p]).collect();
        let mut values = vec![0.0; sizes.iter().product()];
        let mut s = vec![0; l];
        for (k, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            decode(k, &self.sizes, &mut s);
            let idx = sites.iter().zip(&sizes).fold(0, |acc, (&p, &n)| acc * n + s[p]);
            values[idx] += w;
        }
        Ok(MarginalTensor { sites: sites.to_vec(), sizes, values })
    }

    /// `Σ_{p≠q} ⟨C_pq, μ_pq⟩`.
    pub fn cost(&self, c: &PairwiseCost) -> f64 {
        let mut s = vec![0; self.sizes.len()];
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(k, &w)| {
                decode(k, &self.sizes, &mut s);
                w * c.evaluate(&s)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interaction_cost_blocks() {
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 2.5, 2.5, 0.0]);
        let c = cost_from_interaction(&v).unwrap();
        assert_eq!(c.block(0, 1), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.5]));
        assert_eq!(c.block(1, 0), c.block(0, 1).transpose());
        assert_eq!(c.block(1, 1), DMatrix::zeros(2, 2));
        let zero = cost_from_interaction(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(zero.dense().amax(), 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(cost_from_interaction(&bad), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn product_marginals_factorize() {
        let m = MarginalSet::new(vec![vec![0.2, 0.8], vec![0.1, 0.3, 0.6]]).unwrap();
        let mu = JointMeasure::product(&m).unwrap();
        let pair = mu.marginalize(&[0, 1]).unwrap().as_matrix().unwrap();
        for a in 0..2 {
            for b in 0..3 {
                assert!((pair[(a, b)] - m.marginal(0)[a] * m.marginal(1)[b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dirac_two_marginal() {
        let mu = JointMeasure::dirac(vec![2, 2, 2], &[1, 0, 1]).unwrap();
        let m13 = mu.marginalize(&[0, 2]).unwrap().as_matrix().unwrap();
        assert_eq!(m13, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert!(mu.marginalize(&[1, 1]).is_err());
    }

    #[test]
    fn three_marginal_reduces_to_two_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sizes = vec![2, 3, 2, 2];
        let mut w: Vec<f64> = (0..24).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let mu = JointMeasure::new(sizes, w).unwrap();
        let k = mu.marginalize(&[3, 1, 0]).unwrap();
        let m = mu.marginalize(&[3, 1]).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                let summed: f64 = (0..2).map(|c| k.get(&[a, b, c])).sum();
                assert!((summed - m.get(&[a, b])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ordered_pair_cost_counts_twice() {
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let c = cost_from_interaction(&v).unwrap();
        assert_eq!(c.evaluate(&[1, 1]), 2.0);
        let mu = JointMeasure::dirac(vec![2, 2], &[1, 1]).unwrap();
        assert_eq!(mu.cost(&c), 2.0);
    }

    #[test]
    fn marginal_validation() {
        assert!(MarginalSet::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(MarginalSet::from_density(&[1.2]).is_err());
        let m = MarginalSet::from_density(&[0.25, 1.0]).unwrap();
        assert_eq!(m.density().unwrap(), vec![0.25, 1.0]);
        assert_eq!(m.total_size(), 4);
    }

    #[test]
    fn pair_indices_are_dense() {
        let l = 6;
        let mut seen = vec![false; l * (l - 1) / 2];
        for p in 0..l {
            for q in p + 1..l {
                let k = pair_index(l, p, q);
                assert!(!seen[k]);
                seen[k] = true;
            }
        }
        assert!(seen.into_iter().all(|x| x));
    }
}
