//! Revised simplex method for equality-form linear programs
//! `min cᵀx, Ax = b, x ≥ 0`.
//!
//! Columns are supplied through [`ColumnSource`], so very wide programs whose
//! columns are generated on the fly never need to be stored. The basis inverse
//! is kept dense and refactored periodically. Phase I uses one artificial
//! variable per row; artificials that cannot be pivoted out mark redundant rows.

use log::debug;

use crate::error::{Error, Result};

/// Column access for a constraint matrix with `num_rows` rows.
pub trait ColumnSource {
    fn num_rows(&self) -> usize;
    fn num_cols(&self) -> usize;
    fn cost(&self, j: usize) -> f64;
    /// Inner product of column `j` with `y`.
    fn dot(&self, j: usize, y: &[f64]) -> f64;
    /// Add `scale · A_j` to `out`.
    fn axpy(&self, j: usize, scale: f64, out: &mut [f64]);
}

/// Compressed-column storage of an explicit constraint matrix.
#[derive(Debug, Clone)]
pub struct SparseColumns {
    rows: usize,
    costs: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseColumns {
    pub fn new(rows: usize) -> Self {
        SparseColumns { rows, costs: Vec::new(), col_ptr: vec![0], row_idx: Vec::new(), vals: Vec::new() }
    }

    /// Append a column with the given cost and `(row, value)` entries.
    pub fn push(&mut self, cost: f64, entries: &[(usize, f64)]) -> Result<usize> {
        if let Some(&(r, _)) = entries.iter().find(|&&(r, _)| r >= self.rows) {
            return Err(Error::InvalidArgument(format!("row {r} outside {} rows", self.rows)));
        }
        self.costs.push(cost);
        for &(r, v) in entries {
            self.row_idx.push(r);
            self.vals.push(v);
        }
        self.col_ptr.push(self.row_idx.len());
        Ok(self.costs.len() - 1)
    }
}

impl ColumnSource for SparseColumns {
    fn num_rows(&self) -> usize {
        self.rows
    }
    fn num_cols(&self) -> usize {
        self.costs.len()
    }
    fn cost(&self, j: usize) -> f64 {
        self.costs[j]
    }
    fn dot(&self, j: usize, y: &[f64]) -> f64 {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(|p| self.vals[p] * y[self.row_idx[p]]).sum()
    }
    fn axpy(&self, j: usize, scale: f64, out: &mut [f64]) {
        for p in self.col_ptr[j]..self.col_ptr[j + 1] {
            out[self.row_idx[p]] += scale * self.vals[p];
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpOptions {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub refactor_interval: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            max_iterations: 1_000_000,
            feasibility_tol: 1e-9,
            optimality_tol: 1e-11,
            pivot_tol: 1e-10,
            refactor_interval: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Basic solution and dual multipliers returned by [`solve_lp`].
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    /// Structural columns in the final basis with their values.
    pub basic: Vec<(usize, f64)>,
    /// Row multipliers `y` with `c − Aᵀy ≥ 0` at optimality.
    pub duals: Vec<f64>,
    /// Rows found to be linear combinations of the others.
    pub redundant_rows: Vec<usize>,
    pub iterations: usize,
}

impl LpSolution {
    /// Dense primal vector of length `n`.
    pub fn primal(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for &(j, v) in &self.basic {
            x[j] = v;
        }
        x
    }

    /// Smallest basic value; a positive value means the basis is nondegenerate
    /// and (with no redundant rows) the dual multipliers are unique.
    pub fn min_basic_value(&self) -> f64 {
        self.basic.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min)
    }
}

struct Tableau<'a, S: ColumnSource> {
    src: &'a S,
    m: usize,
    n: usize,
    sign: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    opts: &'a LpOptions,
}

impl<'a, S: ColumnSource> Tableau<'a, S> {
    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n
    }

    /// Dense column `j` of the sign-normalized matrix (artificials are unit vectors).
    fn column(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.is_artificial(j) {
            out[j - self.n] = 1.0;
        } else {
            self.src.axpy(j, 1.0, out);
            for (o, s) in out.iter_mut().zip(&self.sign) {
                *o *= s;
            }
        }
    }

    fn dot_col(&self, j: usize, y: &[f64], scratch: &mut [f64]) -> f64 {
        if self.is_artificial(j) {
            y[j - self.n]
        } else {
            for ((s, &yi), &sg) in scratch.iter_mut().zip(y).zip(&self.sign) {
                *s = yi * sg;
            }
            self.src.dot(j, scratch)
        }
    }

    fn ftran(&self, col: &[f64], out: &mut [f64]) {
        let m = self.m;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            out[i] = row.iter().zip(col).map(|(a, b)| a * b).sum();
        }
    }

    fn duals(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (k, &c) in cb.iter().enumerate() {
            if c != 0.0 {
                let row = &self.binv[k * m..(k + 1) * m];
                y.iter_mut().zip(row).for_each(|(yi, r)| *yi += c * r);
            }
        }
        y
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        let t = self.xb[r] / piv;
        for i in 0..m {
            if i != r {
                self.xb[i] -= t * alpha[i];
            }
        }
        self.xb[r] = t;
        for v in &mut self.binv[r * m..(r + 1) * m] {
            *v /= piv;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for (i, row) in before.chunks_mut(m).chain(after.chunks_mut(m)).enumerate() {
            let idx = if i < r { i } else { i + 1 };
            let a = alpha[idx];
            if a != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(x, p)| *x -= a * p);
            }
        }
        self.in_basis[self.basis[r]] = false;
        self.basis[r] = q;
        self.in_basis[q] = true;
    }

    /// Recompute the basis inverse and basic values from scratch.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for i in 0..m {
                a[i * m + k] = col[i];
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&x, &y| a[x * m + c].abs().total_cmp(&a[y * m + c].abs()))
                .unwrap();
            if a[p * m + c].abs() < 1e-14 {
                return Err(Error::Numerical("singular simplex basis".into()));
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let d = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for i in 0..m {
                if i != c {
                    let f = a[i * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            a[i * m + k] -= f * a[c * m + k];
                            inv[i * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        let b = self.b.clone();
        let mut xb = vec![0.0; m];
        self.ftran(&b, &mut xb);
        for v in xb.iter_mut() {
            if *v < 0.0 && *v > -self.opts.feasibility_tol {
                *v = 0.0;
            }
        }
        self.xb = xb;
        Ok(())
    }

    /// Run simplex iterations with the given cost function. Returns the number
    /// of pivots and whether the problem is unbounded.
    fn run(
        &mut self,
        cost: &dyn Fn(usize) -> f64,
        allow_artificial: bool,
        budget: usize,
    ) -> Result<(usize, Option<LpStatus>)> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut scratch = vec![0.0; m];
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        let total = self.n + if allow_artificial { m } else { 0 };
        for it in 0..budget {
            let cb: Vec<f64> = self.basis.iter().map(|&j| cost(j)).collect();
            let y = self.duals(&cb);
            let bland = degenerate_run > 30;
            let mut entering = None;
            let mut best = -self.opts.optimality_tol;
            for j in 0..total {
                if self.in_basis[j] {
                    continue;
                }
                let d = cost(j) - self.dot_col(j, &y, &mut scratch);
                if d < best {
                    entering = Some(j);
                    best = d;
                    if bland {
                        break;
                    }
                }
            }
            let Some(q) = entering else {
                return Ok((it, None));
            };
            self.column(q, &mut col);
            self.ftran(&col, &mut alpha);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if alpha[i] > self.opts.pivot_tol {
                    let t = self.xb[i].max(0.0) / alpha[i];
                    let better = match leave {
                        None => true,
                        Some((r, tr)) => {
                            if t < tr - 1e-12 {
                                true
                            } else if t <= tr + 1e-12 {
                                if bland {
                                    self.basis[i] < self.basis[r]
                                } else {
                                    let ai = self.is_artificial(self.basis[i]);
                                    let ar = self.is_artificial(self.basis[r]);
                                    (ai && !ar) || (ai == ar && alpha[i] > alpha[r])
                                }
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        leave = Some((i, t));
                    }
                }
            }
            let Some((r, t)) = leave else {
                return Ok((it, Some(LpStatus::Unbounded)));
            };
            degenerate_run = if t <= 1e-12 { degenerate_run + 1 } else { 0 };
            self.pivot(r, q, &alpha);
            since_refactor += 1;
            if since_refactor >= self.opts.refactor_interval {
                self.refactor()?;
                since_refactor = 0;
            }
        }
        Ok((budget, Some(LpStatus::IterationLimit)))
    }
}

/// Solve `min cᵀx, Ax = b, x ≥ 0` with a two-phase revised simplex method.
pub fn solve_lp<S: ColumnSource>(src: &S, b: &[f64], opts: &LpOptions) -> Result<LpSolution> {
    let m = src.num_rows();
    let n = src.num_cols();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!("rhs of length {} for {m} rows", b.len())));
    }
    let sign: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let bb: Vec<f64> = b.iter().zip(&sign).map(|(v, s)| v * s).collect();
    let mut binv = vec![0.0; m * m];
    for i in 0..m {
        binv[i * m + i] = 1.0;
    }
    let mut in_basis = vec![false; n + m];
    in_basis[n..].iter_mut().for_each(|v| *v = true);
    let mut t = Tableau {
        src,
        m,
        n,
        sign,
        b: bb.clone(),
        basis: (n..n + m).collect(),
        in_basis,
        binv,
        xb: bb,
        opts,
    };

    // phase I
    let phase1 = |j: usize| if j >= n { 1.0 } else { 0.0 };
    let (it1, st1) = t.run(&phase1, false, opts.max_iterations)?;
    t.refactor()?;
    let infeas: f64 = t.basis.iter().zip(&t.xb).filter(|(&j, _)| j >= n).map(|(_, v)| v).sum();
    let bnorm = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if st1 == Some(LpStatus::IterationLimit) {
        return Ok(finish(&t, LpStatus::IterationLimit, src, it1, vec![]));
    }
    if infeas > opts.feasibility_tol * (1.0 + bnorm) {
        debug!("simplex phase I: infeasibility {infeas:.3e}");
        return Ok(finish(&t, LpStatus::Infeasible, src, it1, vec![]));
    }

    // drive remaining artificials out of the basis
    let mut redundant = Vec::new();
    let mut col = vec![0.0; m];
    let mut alpha = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    for r in 0..m {
        if t.basis[r] < n {
            continue;
        }
        let row: Vec<f64> = t.binv[r * m..(r + 1) * m].to_vec();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if t.in_basis[j] {
                continue;
            }
            let v = t.dot_col(j, &row, &mut scratch).abs();
            if v > 1e-9 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, _)) => {
                t.column(j, &mut col);
                t.ftran(&col, &mut alpha);
                t.xb[r] = 0.0;
                t.pivot(r, j, &alpha);
            }
            None => redundant.push(t.basis[r] - n),
        }
    }
    t.refactor()?;

    // phase II; artificials left in the basis sit at zero in redundant rows
    let phase2 = |j: usize| if j >= n { 0.0 } else { src.cost(j) };
    let (it2, st2) = t.run(&phase2, false, opts.max_iterations.saturating_sub(it1))?;
    t.refactor()?;
    let status = st2.unwrap_or(LpStatus::Optimal);
    debug!("simplex: {status:?} after {} pivots, {} redundant rows", it1 + it2, redundant.len());
    redundant.sort_unstable();
    Ok(finish(&t, status, src, it1 + it2, redundant))
}

fn finish<S: ColumnSource>(
    t: &Tableau<'_, S>,
    status: LpStatus,
    src: &S,
    iterations: usize,
    redundant_rows: Vec<usize>,
) -> LpSolution {
    let n = t.n;
    let cb: Vec<f64> = t.basis.iter().map(|&j| if j >= n { 0.0 } else { src.cost(j) }).collect();
    let y = t.duals(&cb);
    let duals: Vec<f64> = y.iter().zip(&t.sign).map(|(v, s)| v * s).collect();
    let mut basic: Vec<(usize, f64)> = t
        .basis
        .iter()
        .zip(&t.xb)
        .filter(|(&j, _)| j < n)
        .map(|(&j, &v)| (j, v.max(0.0)))
        .collect();
    basic.sort_unstable_by_key(|&(j, _)| j);
    let objective = basic.iter().map(|&(j, v)| src.cost(j) * v).sum();
    LpSolution { status, objective, basic, duals, redundant_rows, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transport(a: [f64; 2], b: [f64; 2], cost: [[f64; 2]; 2]) -> (SparseColumns, Vec<f64>) {
        let mut s = SparseColumns::new(4);
        for i in 0..2 {
            for j in 0..2 {
                s.push(cost[i][j], &[(i, 1.0), (2 + j, 1.0)]).unwrap();
            }
        }
        (s, vec![a[0], a[1], b[0], b[1]])
    }

    #[test]
    fn transport_problem_with_redundant_row() {
        let (s, b) = transport([0.3, 0.7], [0.6, 0.4], [[0.0, 1.0], [1.0, 0.0]]);
        let sol = solve_lp(&s, &b, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 0.3).abs() < 1e-14);
        assert_eq!(sol.redundant_rows.len(), 1);
        let dual: f64 = sol.duals.iter().zip(&b).map(|(y, b)| y * b).sum();
        assert!((dual - 0.3).abs() < 1e-14);
    }

    #[test]
    fn reports_infeasible_and_unbounded() {
        let mut s = SparseColumns::new(1);
        s.push(1.0, &[(0, 1.0)]).unwrap();
        let sol = solve_lp(&s, &[-1.0], &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);

        let mut s = SparseColumns::new(1);
        s.push(-1.0, &[(0, 1.0)]).unwrap();
        s.push(0.0, &[(0, 1.0)]).unwrap();
        s.push(-1.0, &[(0, -1.0)]).unwrap();
        let sol = solve_lp(&s, &[1.0], &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_rhs_rows_keep_dual_signs() {
        // min x0 + 2 x1 with -x0 - x1 = -1
        let mut s = SparseColumns::new(1);
        s.push(1.0, &[(0, -1.0)]).unwrap();
        s.push(2.0, &[(0, -1.0)]).unwrap();
        let sol = solve_lp(&s, &[-1.0], &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-14);
        assert!((sol.duals[0] + 1.0).abs() < 1e-14);
    }
}
