//! Type-II Anderson acceleration for a fixed-point map `w ↦ T(w)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct Anderson {
    memory: usize,
    prev_f: Option<Vec<f64>>,
    prev_g: Option<Vec<f64>>,
    df: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
}

impl Anderson {
    pub(crate) fn new(memory: usize) -> Self {
        Anderson { memory, prev_f: None, prev_g: None, df: VecDeque::new(), dg: VecDeque::new() }
    }

    pub(crate) fn reset(&mut self) {
        self.prev_f = None;
        self.prev_g = None;
        self.df.clear();
        self.dg.clear();
    }

    /// Record `w` and `f = T(w)` and return the extrapolated next point, or
    /// `None` when there is not yet any history (take the plain step).
    pub(crate) fn step(&mut self, w: &[f64], f: &[f64]) -> Option<Vec<f64>> {
        let g: Vec<f64> = f.iter().zip(w).map(|(a, b)| a - b).collect();
        if let (Some(pf), Some(pg)) = (&self.prev_f, &self.prev_g) {
            self.df.push_back(f.iter().zip(pf).map(|(a, b)| a - b).collect());
            self.dg.push_back(g.iter().zip(pg).map(|(a, b)| a - b).collect());
            if self.df.len() > self.memory {
                self.df.pop_front();
                self.dg.pop_front();
            }
        }
        self.prev_f = Some(f.to_vec());
        self.prev_g = Some(g.clone());
        let m = self.dg.len();
        if m == 0 {
            return None;
        }
        let mut gram = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for i in 0..m {
            rhs[i] = dot(&self.dg[i], &g);
            for j in 0..=i {
                let v = dot(&self.dg[i], &self.dg[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let trace: f64 = (0..m).map(|i| gram[(i, i)]).sum();
        if !(trace > 0.0) {
            return None;
        }
        for i in 0..m {
            gram[(i, i)] += 1e-10 * trace;
        }
        let gamma = gram.cholesky()?.solve(&rhs);
        let mut next = f.to_vec();
        for (i, dfi) in self.df.iter().enumerate() {
            let c = gamma[i];
            next.iter_mut().zip(dfi).for_each(|(n, d)| *n -= c * d);
        }
        next.iter().all(|v| v.is_finite()).then_some(next)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
