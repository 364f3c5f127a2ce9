//! Sparse LDLᵀ factorization of quasi-definite matrices.
//!
//! The matrix is reordered with a minimum-degree heuristic, the elimination
//! tree is computed symbolically, and the numeric factor is built column by
//! column with an up-looking scheme. Pivots are expected to carry a known sign;
//! a pivot that collapses towards zero is replaced by a small value of that
//! sign, which keeps the factorization usable on rank-deficient constraints.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct SparseLdl {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    bumped: usize,
}

impl SparseLdl {
    /// Factor the symmetric matrix given by `entries` (any triangle, duplicates
    /// summed). `signs[k]` is the expected sign of pivot `k` in the original
    /// numbering and `min_pivot` the magnitude used when a pivot degenerates.
    pub(crate) fn factor(
        n: usize,
        entries: &[(usize, usize, f64)],
        signs: &[f64],
        min_pivot: f64,
    ) -> Result<Self> {
        if signs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} pivot signs for a {n}x{n} matrix",
                signs.len()
            )));
        }
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(Error::InvalidArgument(format!(
                "entry ({i}, {j}) outside a {n}x{n} matrix"
            )));
        }
        let perm = minimum_degree(n, entries);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // upper triangle of the permuted matrix in compressed-column form
        let mut triplets: Vec<(usize, usize, f64)> = entries
            .iter()
            .map(|&(i, j, v)| {
                let (a, b) = (iperm[i], iperm[j]);
                (a.min(b), a.max(b), v)
            })
            .collect();
        triplets.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(triplets.len());
        let mut ax: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = (NONE, NONE);
        for &(r, c, v) in &triplets {
            if (r, c) == last {
                *ax.last_mut().unwrap() += v;
            } else {
                ai.push(r);
                ax.push(v);
                ap[c + 1] += 1;
                last = (r, c);
            }
        }
        for c in 0..n {
            ap[c + 1] += ap[c];
        }

        let (etree, lnz) = elimination_tree(n, &ap, &ai);
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let psigns: Vec<f64> = perm.iter().map(|&o| signs[o]).collect();

        let mut f = SparseLdl {
            n,
            perm,
            li: vec![0; lp[n]],
            lx: vec![0.0; lp[n]],
            lp,
            d: vec![0.0; n],
            bumped: 0,
        };
        f.numeric(&ap, &ai, &ax, &etree, &psigns, min_pivot)?;
        Ok(f)
    }

    fn numeric(
        &mut self,
        ap: &[usize],
        ai: &[usize],
        ax: &[f64],
        etree: &[usize],
        signs: &[f64],
        min_pivot: f64,
    ) -> Result<()> {
        let n = self.n;
        let mut marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut y_vals = vec![0.0; n];
        let mut stack = vec![0usize; n];
        let mut next_slot: Vec<usize> = self.lp[..n].to_vec();
        let mut dinv = vec![0.0; n];

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    self.d[k] = ax[p];
                    continue;
                }
                y_vals[b] = ax[p];
                if marked[b] {
                    continue;
                }
                marked[b] = true;
                stack[0] = b;
                let mut depth = 1;
                let mut next = etree[b];
                while next != NONE && next < k && !marked[next] {
                    marked[next] = true;
                    stack[depth] = next;
                    depth += 1;
                    next = etree[next];
                }
                while depth > 0 {
                    depth -= 1;
                    y_idx[nnz_y] = stack[depth];
                    nnz_y += 1;
                }
            }
            for t in (0..nnz_y).rev() {
                let c = y_idx[t];
                let slot = next_slot[c];
                let yc = y_vals[c];
                for q in self.lp[c]..slot {
                    y_vals[self.li[q]] -= self.lx[q] * yc;
                }
                self.li[slot] = k;
                let l = yc * dinv[c];
                self.lx[slot] = l;
                self.d[k] -= yc * l;
                next_slot[c] += 1;
                y_vals[c] = 0.0;
                marked[c] = false;
            }
            if !self.d[k].is_finite() {
                return Err(Error::Numerical(format!("non-finite pivot at column {k}")));
            }
            if self.d[k] * signs[k] < min_pivot {
                self.d[k] = signs[k] * min_pivot;
                self.bumped += 1;
            }
            dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    pub(crate) fn dim(&self) -> usize {
        self.n
    }

    /// Number of pivots replaced because they had the wrong sign or vanished.
    pub(crate) fn regularized_pivots(&self) -> usize {
        self.bumped
    }

    pub(crate) fn factor_nnz(&self) -> usize {
        self.lx.len()
    }

    /// Overwrite `b` with the solution of `L D Lᵀ x = b`, using `work` as scratch.
    pub(crate) fn solve_in_place(&self, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n;
        work.clear();
        work.extend(self.perm.iter().map(|&o| b[o]));
        let x = work.as_mut_slice();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j]..self.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut s = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[j] = s;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}

fn elimination_tree(n: usize, ap: &[usize], ai: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut work = vec![NONE; n];
    let mut lnz = vec![0usize; n];
    let mut etree = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for &row in &ai[ap[j]..ap[j + 1]] {
            let mut i = row;
            if i >= j {
                continue;
            }
            while work[i] != j {
                if etree[i] == NONE {
                    etree[i] = j;
                }
                lnz[i] += 1;
                work[i] = j;
                i = etree[i];
            }
        }
    }
    (etree, lnz)
}

/// Greedy minimum-degree ordering on the adjacency graph of the off-diagonal
/// pattern. Returns `perm` with `perm[new] = old`.
fn minimum_degree(n: usize, entries: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j, _) in entries {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        adj.iter().enumerate().map(|(v, a)| Reverse((a.len(), v))).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != adj[v].len() {
            continue;
        }
        done[v] = true;
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut x, mut y) = (0, 0);
            while x < a.len() || y < b.len() {
                let next = match (a.get(x), b.get(y)) {
                    (Some(&p), Some(&q)) if p == q => {
                        x += 1;
                        y += 1;
                        p
                    }
                    (Some(&p), Some(&q)) if p < q => {
                        x += 1;
                        p
                    }
                    (Some(_), Some(&q)) => {
                        y += 1;
                        q
                    }
                    (Some(&p), None) => {
                        x += 1;
                        p
                    }
                    (None, Some(&q)) => {
                        y += 1;
                        q
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}
