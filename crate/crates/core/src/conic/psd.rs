//! Scaled symmetric vectorization and projection onto the PSD cone.
//!
//! A symmetric `n × n` matrix is stored as its lower triangle in column-major
//! order with off-diagonal entries multiplied by √2, so that the Euclidean
//! inner product of two vectors equals the trace inner product of the matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Number of entries in the scaled vectorization of an `n × n` matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)` in the scaled vectorization, together with the
/// factor `f` such that `M[i, j] = f * v[position]`.
pub fn svec_index(n: usize, i: usize, j: usize) -> (usize, f64) {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    debug_assert!(r < n);
    let idx = c * n - c * c.saturating_sub(1) / 2 + (r - c);
    (idx, if r == c { 1.0 } else { 1.0 / SQRT2 })
}

/// Scaled vectorization of a symmetric matrix (only the lower triangle is read).
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in j..n {
            out.push(if i == j { m[(i, j)] } else { SQRT2 * m[(i, j)] });
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// Project a symmetric matrix onto the PSD cone by clipping negative eigenvalues.
///
/// Rejects inputs whose asymmetry exceeds `1e-12` (relative to the largest entry).
pub fn project_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = s.amax().max(1.0);
    let asym = (s - s.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (s + s.transpose()) * 0.5;
    Ok(clip_eigenvalues(sym))
}

fn clip_eigenvalues(sym: DMatrix<f64>) -> DMatrix<f64> {
    let n = sym.nrows();
    if n == 0 {
        return sym;
    }
    let eig = SymmetricEigen::new(sym);
    let negatives = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if negatives == 0 {
        return reconstruct(&eig, |l| l);
    }
    if negatives == n {
        return DMatrix::zeros(n, n);
    }
    reconstruct(&eig, |l| l.max(0.0))
}

fn reconstruct(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = eig.eigenvalues.len();
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let l = f(l);
        if l == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out.ger(l, &v, &v, 1.0);
    }
    out
}

/// In-place projection of a scaled vectorization onto the PSD cone.
pub(crate) fn project_svec_in_place(v: &mut [f64], n: usize) {
    let m = smat(v, n);
    let eig = SymmetricEigen::new(m);
    let neg = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if neg == 0 {
        return;
    }
    let p = if neg == n {
        DMatrix::zeros(n, n)
    } else if 2 * neg <= n {
        // subtract the negative part: cheaper when few eigenvalues are negative
        let mut m = smat(v, n);
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l < 0.0 {
                let e = eig.eigenvectors.column(k);
                m.ger(-l, &e, &e, 1.0);
            }
        }
        m
    } else {
        reconstruct(&eig, |l| l.max(0.0))
    };
    v.copy_from_slice(&svec(&p));
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn svec_preserves_trace_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        a = &a + a.transpose();
        b = &b + b.transpose();
        let lhs: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        let rhs = (&a * &b).trace();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!((smat(&svec(&a), n) - &a).amax() < 1e-15);
        for i in 0..n {
            for j in 0..n {
                let (k, f) = svec_index(n, i, j);
                assert!((f * svec(&a)[k] - a[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_is_fixed() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((project_psd(&id).unwrap() - &id).amax() < 1e-14);
    }

    #[test]
    fn clips_negative_eigenvalue() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, -3.0]));
        let p = project_psd(&d).unwrap();
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0]));
        assert!((p - expect).amax() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(project_psd(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(1..9);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let s = (&a + a.transpose()) * 0.5;
            let p = project_psd(&s).unwrap();
            let pp = project_psd(&((&p + p.transpose()) * 0.5)).unwrap();
            assert!((&pp - &p).norm() <= 1e-12);
            assert!(min_eigenvalue(&p) > -1e-12);
        }
    }

    #[test]
    fn in_place_projection_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..8);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let s = (&a + a.transpose()) * 0.5;
            let mut v = svec(&s);
            project_svec_in_place(&mut v, n);
            let p = project_psd(&s).unwrap();
            assert!((smat(&v, n) - p).amax() < 1e-12);
        }
    }
}
