#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sce_core::mmot::{cost_from_interaction, MarginalSet, PairwiseCost};
use sce_core::model::{build_spinless_chain, InteractionProfile};

/// Binary cost with `C_pq(1,1)` uniform in `[0, 1)` and zeros elsewhere.
pub fn random_binary_cost(rng: &mut ChaCha8Rng, l: usize) -> PairwiseCost {
    let mut c = PairwiseCost::zeros(&vec![2; l]);
    for p in 0..l {
        for q in p + 1..l {
            let v = rng.gen::<f64>();
            c.set_block(p, q, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, v])).unwrap();
        }
    }
    c
}

/// Binary cost with all four entries of every block random and nonnegative.
pub fn random_dense_cost(rng: &mut ChaCha8Rng, l: usize) -> PairwiseCost {
    let mut c = PairwiseCost::zeros(&vec![2; l]);
    for p in 0..l {
        for q in p + 1..l {
            let blk = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>());
            c.set_block(p, q, blk).unwrap();
        }
    }
    c
}

pub fn interior_density(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    (0..l).map(|_| rng.gen_range(0.1..0.9)).collect()
}

pub fn marginals(rho: &[f64]) -> MarginalSet {
    MarginalSet::from_density(rho).unwrap()
}

pub fn chain_cost(l: usize, u: f64, profile: InteractionProfile) -> PairwiseCost {
    let h = build_spinless_chain(l, u, profile).unwrap();
    cost_from_interaction(h.interaction()).unwrap()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}
