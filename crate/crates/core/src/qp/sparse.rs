//! Compressed sparse row matrices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates and
    /// dropping explicit zeros.
    ///
    /// Panics if an index is out of range.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            assert!(
                r < nrows && c < ncols,
                "triplet ({r}, {c}) outside {nrows}x{ncols}"
            );
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                rows.push(r);
                last = Some((r, c));
            }
        }
        let keep: Vec<bool> = values.iter().map(|v| *v != 0.0).collect();
        let mut k = 0;
        let mut ci = Vec::with_capacity(col_idx.len());
        let mut vs = Vec::with_capacity(values.len());
        for (idx, r) in rows.iter().enumerate() {
            if keep[idx] {
                row_ptr[r + 1] += 1;
                ci.push(col_idx[idx]);
                vs.push(values[idx]);
                k += 1;
            }
        }
        debug_assert_eq!(k, vs.len());
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx: ci,
            values: vs,
        }
    }

    /// Symmetric matrix from upper-triangle triplets (`row <= col`); entries
    /// below the diagonal are mirrored.
    pub fn symmetric_from_upper(n: usize, upper: &[(usize, usize, f64)]) -> Self {
        let mut all = Vec::with_capacity(upper.len() * 2);
        for &(r, c, v) in upper {
            let (r, c) = if r <= c { (r, c) } else { (c, r) };
            all.push((r, c, v));
            if r != c {
                all.push((c, r, v));
            }
        }
        Self::from_triplets(n, n, &all)
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` entries of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b]
            .iter()
            .cloned()
            .zip(self.values[a..b].iter().cloned())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|e| e.0 == c).map(|e| e.1).unwrap_or(0.0)
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `y = A^T x`.
    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                for (c, v) in self.row(r) {
                    y[c] += v * xr;
                }
            }
        }
        y
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && self
                .triplets()
                .all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol * (1.0 + v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_roundtrip_and_products() {
        let m = SparseMatrix::from_triplets(
            2,
            3,
            &[(0, 0, 1.0), (1, 2, 2.0), (0, 0, 1.0), (1, 1, 0.0)],
        );
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![2.0, 2.0]);
        assert_eq!(m.mul_t_vec(&[1.0, 3.0]), vec![2.0, 0.0, 6.0]);
        let s = SparseMatrix::symmetric_from_upper(2, &[(0, 1, 3.0), (1, 1, 1.0)]);
        assert!(s.is_symmetric(0.0));
        assert_eq!(s.get(1, 0), 3.0);
    }
}
