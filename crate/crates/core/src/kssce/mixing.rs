use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// How the next input density is formed from the iteration history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixingScheme {
    /// `ρ_next = (1 − α) ρ_in + α ρ_out`.
    Simple,
    /// Residual extrapolation over the most recent pairs, then damping by `α`.
    Anderson,
}

impl std::str::FromStr for MixingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" | "linear" => Ok(MixingScheme::Simple),
            "anderson" | "pulay" => Ok(MixingScheme::Anderson),
            other => Err(Error::InvalidArgument(format!("unknown mixing scheme '{other}'"))),
        }
    }
}

/// Smallest singular value ratio accepted for the Anderson least-squares system.
const RANK_TOL: f64 = 1e-12;

/// Next input density from `(ρ_in, ρ_out)` pairs, oldest first.
///
/// Anderson mixing uses up to `depth` of the most recent pairs. The result is
/// clamped to `[clamp, 1 − clamp]` and shifted to sum to `n`.
pub fn mix(
    history: &[(Vec<f64>, Vec<f64>)],
    scheme: MixingScheme,
    alpha: f64,
    depth: usize,
    n: f64,
    clamp: f64,
) -> Result<Vec<f64>> {
    let (last_in, last_out) = history
        .last()
        .ok_or_else(|| Error::InvalidArgument("mixing needs at least one density pair".into()))?;
    let l = last_in.len();
    if history.iter().any(|(a, b)| a.len() != l || b.len() != l) {
        return Err(Error::DimensionMismatch("density history has inconsistent lengths".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("mixing parameter {alpha} outside (0, 1]")));
    }
    let simple = || -> Vec<f64> { last_in.iter().zip(last_out).map(|(i, o)| (1.0 - alpha) * i + alpha * o).collect() };
    let next = match scheme {
        MixingScheme::Simple => simple(),
        MixingScheme::Anderson => {
            let m = depth.min(history.len() - 1);
            if m == 0 {
                simple()
            } else {
                anderson(&history[history.len() - 1 - m..], alpha).unwrap_or_else(|| {
                    debug!("Anderson system is rank deficient, using simple mixing");
                    simple()
                })
            }
        }
    };
    project_density(&next, n, clamp)
}

fn anderson(window: &[(Vec<f64>, Vec<f64>)], alpha: f64) -> Option<Vec<f64>> {
    let l = window[0].0.len();
    let m = window.len() - 1;
    let resid: Vec<DVector<f64>> = window
        .iter()
        .map(|(i, o)| DVector::from_iterator(l, o.iter().zip(i).map(|(a, b)| a - b)))
        .collect();
    let inputs: Vec<DVector<f64>> = window.iter().map(|(i, _)| DVector::from_column_slice(i)).collect();
    let mut dr = DMatrix::zeros(l, m);
    let mut dx = DMatrix::zeros(l, m);
    for k in 0..m {
        dr.set_column(k, &(&resid[k + 1] - &resid[k]));
        dx.set_column(k, &(&inputs[k + 1] - &inputs[k]));
    }
    let svd = dr.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || svd.singular_values.min() <= RANK_TOL * smax {
        return None;
    }
    let r_last = &resid[m];
    let gamma = svd.solve(r_last, 0.0).ok()?;
    let x_bar = &inputs[m] - &dx * &gamma;
    let r_bar = r_last - &dr * &gamma;
    let next = x_bar + r_bar * alpha;
    next.iter().all(|v| v.is_finite()).then(|| next.iter().copied().collect())
}

/// Clamp to `[clamp, 1 − clamp]` after a uniform shift chosen by bisection so
/// that the entries sum to `n`.
pub fn project_density(rho: &[f64], n: f64, clamp: f64) -> Result<Vec<f64>> {
    let l = rho.len() as f64;
    if !(0.0..0.5).contains(&clamp) {
        return Err(Error::InvalidArgument(format!("clamp {clamp} outside [0, 0.5)")));
    }
    if n < l * clamp - 1e-12 || n > l * (1.0 - clamp) + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "{n} particles cannot be spread over {l} sites with occupations in [{clamp}, {}]",
            1.0 - clamp
        )));
    }
    let clamped = |shift: f64| -> Vec<f64> { rho.iter().map(|r| (r + shift).clamp(clamp, 1.0 - clamp)).collect() };
    let total = |shift: f64| -> f64 { clamped(shift).iter().sum() };
    let lo_max = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hi_min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (clamp - lo_max - 1.0, 1.0 - hi_min + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < n {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let mut out = clamped(0.5 * (lo + hi));
    // remove the last rounding error on the unclamped entries
    let free: Vec<usize> = (0..out.len()).filter(|&p| out[p] > clamp && out[p] < 1.0 - clamp).collect();
    if !free.is_empty() {
        let excess = (out.iter().sum::<f64>() - n) / free.len() as f64;
        for p in free {
            out[p] -= excess;
        }
    }
    Ok(out)
}
