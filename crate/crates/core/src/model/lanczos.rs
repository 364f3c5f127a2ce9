//! Lowest eigenpair of a large symmetric operator by restarted Lanczos with
//! full reorthogonalization.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub(crate) struct LanczosOptions {
    pub tolerance: f64,
    pub krylov_size: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, w);
            axpy(-c, b, w);
        }
    }
}

/// Smallest eigenvalue and unit eigenvector of `apply` restricted to the
/// orthogonal complement of the orthonormal vectors in `deflate`.
pub(crate) fn lowest_eigenpair(
    dim: usize,
    apply: &dyn Fn(&[f64], &mut [f64]),
    deflate: &[Vec<f64>],
    opts: &LanczosOptions,
) -> Result<(f64, Vec<f64>)> {
    if dim <= deflate.len() {
        return Err(Error::InvalidArgument("nothing left to diagonalize after deflation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, deflate);
    let nv = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);

    let k_max = opts.krylov_size.min(dim - deflate.len()).max(1);
    let mut w = vec![0.0; dim];
    for _restart in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![v.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut ritz: Option<(f64, Vec<f64>)> = None;
        for j in 0..k_max {
            apply(&basis[j], &mut w);
            orthogonalize(&mut w, deflate);
            let a = dot(&basis[j], &w);
            alpha.push(a);
            orthogonalize(&mut w, &basis);
            let b = dot(&w, &w).sqrt();
            let last = j + 1 == k_max;
            let exhausted = b <= 1e-13 * a.abs().max(1.0);
            if last || exhausted || j % 4 == 3 {
                let (theta, y) = smallest_ritz(&alpha, &beta);
                let res = b * y[j].abs();
                ritz = Some((theta, y));
                if res <= opts.tolerance * theta.abs().max(1.0) || exhausted {
                    let x = combine(&basis, ritz.as_ref().unwrap().1.as_slice());
                    return refine(dim, apply, deflate, x);
                }
            }
            if last {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let (_, y) = ritz.expect("at least one Ritz value computed");
        v = combine(&basis, &y);
        orthogonalize(&mut v, deflate);
        let nv = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
    }
    Err(Error::Numerical(format!(
        "Lanczos did not reach residual {:.1e} after {} restarts",
        opts.tolerance, opts.max_restarts
    )))
}

fn smallest_ritz(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let idx = eig.eigenvalues.imin();
    (eig.eigenvalues[idx], eig.eigenvectors.column(idx).iter().copied().collect())
}

fn combine(basis: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; basis[0].len()];
    for (b, &c) in basis.iter().zip(y) {
        axpy(c, b, &mut x);
    }
    x
}

fn refine(
    dim: usize,
    apply: &dyn Fn(&[f64], &mut [f64]),
    deflate: &[Vec<f64>],
    mut x: Vec<f64>,
) -> Result<(f64, Vec<f64>)> {
    orthogonalize(&mut x, deflate);
    let n = dot(&x, &x).sqrt();
    x.iter_mut().for_each(|v| *v /= n);
    let mut hx = vec![0.0; dim];
    apply(&x, &mut hx);
    Ok((dot(&x, &hx), x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_laplacian() {
        // eigenvalues of the n-site path adjacency are 2cos(kπ/(n+1))
        let n = 120;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut s = 0.0;
                if i > 0 {
                    s += x[i - 1];
                }
                if i + 1 < n {
                    s += x[i + 1];
                }
                y[i] = -s;
            }
        };
        let opts = LanczosOptions { tolerance: 1e-10, krylov_size: 60, max_restarts: 500, seed: 1 };
        let (e0, x0) = lowest_eigenpair(n, &apply, &[], &opts).unwrap();
        let exact = -2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((e0 - exact).abs() < 1e-10, "{e0} vs {exact}");
        let (e1, _) = lowest_eigenpair(n, &apply, &[x0], &opts).unwrap();
        let exact1 = -2.0 * (2.0 * std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((e1 - exact1).abs() < 1e-9, "{e1} vs {exact1}");
    }
}
