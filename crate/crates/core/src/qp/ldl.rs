//! Sparse `L D L^T` factorization of quasidefinite matrices.
//!
//! Up-looking algorithm driven by the elimination tree. The pivot order is
//! fixed by a minimum-degree ordering; no numerical pivoting is done, so
//! pivots whose sign disagrees with the expected inertia are replaced by a
//! small regularization of the right sign.

use super::ordering::minimum_degree;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    slot: Vec<usize>,
    parent: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    signs: Vec<f64>,
    regularized: usize,
}

impl LdlFactor {
    /// Symbolic analysis for a symmetric pattern given by upper entries
    /// `(row, col)` (either orientation is accepted; duplicates allowed).
    /// `signs[i]` is the expected sign of pivot `i` (`+1` or `-1`).
    pub fn analyze(n: usize, entries: &[(usize, usize)], signs: &[f64]) -> Self {
        let edges: Vec<(usize, usize)> = entries.iter().filter(|e| e.0 != e.1).cloned().collect();
        let perm = minimum_degree(n, &edges);
        let mut pinv = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            pinv[i] = k;
        }

        // (col, row, source) in permuted coordinates, row <= col
        let mut keys: Vec<(usize, usize, usize)> = Vec::with_capacity(entries.len() + n);
        for (e, &(r, c)) in entries.iter().enumerate() {
            let (i, j) = (pinv[r], pinv[c]);
            keys.push((i.max(j), i.min(j), e));
        }
        for k in 0..n {
            keys.push((k, k, NONE));
        }
        keys.sort_unstable();

        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(keys.len());
        let mut slot = vec![0usize; entries.len()];
        let mut last = (NONE, NONE);
        for &(col, row, src) in &keys {
            if (col, row) != last {
                ai.push(row);
                ap[col + 1] += 1;
                last = (col, row);
            }
            if src != NONE {
                slot[src] = ai.len() - 1;
            }
        }
        for k in 0..n {
            ap[k + 1] += ap[k];
        }

        // elimination tree and column counts
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &i0 in &ai[ap[k]..ap[k + 1]] {
                let mut i = i0;
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NONE {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz_l = lp[n];
        let psigns = perm.iter().map(|&i| signs[i]).collect();
        LdlFactor {
            n,
            ax: vec![0.0; ai.len()],
            perm,
            ap,
            ai,
            slot,
            parent,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            signs: psigns,
            regularized: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Number of pivots replaced during the last numeric factorization.
    pub fn regularized_pivots(&self) -> usize {
        self.regularized
    }

    /// Numeric factorization. `values` follow the order of the entries given
    /// to [`LdlFactor::analyze`]; duplicates are summed.
    pub fn factor(&mut self, values: &[f64], eps: f64, delta: f64) {
        let n = self.n;
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (e, &v) in values.iter().enumerate() {
            self.ax[self.slot[e]] += v;
        }
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        self.regularized = 0;
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in self.ap[k]..self.ap[k + 1] {
                let mut i = self.ai[p];
                y[i] += self.ax[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = self.lp[i] + lnz[i];
                for p in self.lp[i]..p2 {
                    y[self.li[p]] -= self.lx[p] * yi;
                }
                let l_ki = yi / self.d[i];
                dk -= l_ki * yi;
                self.li[p2] = k;
                self.lx[p2] = l_ki;
                lnz[i] += 1;
            }
            let s = self.signs[k];
            if !(s * dk > eps) {
                dk = s * delta;
                self.regularized += 1;
            }
            self.d[k] = dk;
        }
    }

    /// Solves `K x = b` in place using the current factors.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                xj -= self.lx[p] * x[self.li[p]];
            }
            x[j] = xj;
        }
        for (k, &i) in self.perm.iter().enumerate() {
            b[i] = x[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|r| r.iter().zip(x).map(|(u, v)| u * v).sum())
            .collect()
    }

    #[test]
    fn solves_quasidefinite_system() {
        // [[4 1 0 1],[1 3 0 0],[0 0 2 1],[1 0 1 -1]]
        let dense = vec![
            vec![4.0, 1.0, 0.0, 1.0],
            vec![1.0, 3.0, 0.0, 0.0],
            vec![0.0, 0.0, 2.0, 1.0],
            vec![1.0, 0.0, 1.0, -1.0],
        ];
        let mut entries = Vec::new();
        let mut vals = Vec::new();
        for i in 0..4 {
            for j in i..4 {
                if dense[i][j] != 0.0 {
                    entries.push((i, j));
                    vals.push(dense[i][j]);
                }
            }
        }
        let mut f = LdlFactor::analyze(4, &entries, &[1.0, 1.0, 1.0, -1.0]);
        f.factor(&vals, 1e-14, 1e-8);
        assert_eq!(f.regularized_pivots(), 0);
        let b = vec![1.0, -2.0, 0.5, 3.0];
        let mut x = b.clone();
        f.solve(&mut x);
        let r = dense_mul(&dense, &x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let entries = vec![(0, 0), (0, 0), (0, 1), (1, 1)];
        let vals = vec![1.0, 1.0, 1.0, 2.0];
        let mut f = LdlFactor::analyze(2, &entries, &[1.0, 1.0]);
        f.factor(&vals, 1e-14, 1e-8);
        let mut x = vec![3.0, 3.0];
        f.solve(&mut x);
        // [[2,1],[1,2]] x = [3,3] -> x = [1,1]
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
