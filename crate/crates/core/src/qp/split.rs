//! Lifting piecewise-linear terms into a QP through split variables.
//!
//! A residual `t = r(x)` is represented as `t = t_plus - t_minus` with both
//! parts nonnegative; `|x_j|` becomes `x_j = p_j - m_j`, `p_j, m_j >= 0`.
//! Squared terms may weight the two parts of a residual differently. The
//! lift is exact whenever every squared expression is nonnegative at the
//! complementary split and its coefficients on `t_plus + t_minus` are
//! nonnegative, since then any non-complementary split can only add cost.

use super::{ConvexQP, SparseMatrix};
use crate::affine::AffineForm;

/// `weight * (base(x) + sum pos_k t_plus_k + sum neg_k t_minus_k)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareTerm {
    pub weight: f64,
    pub base: AffineForm,
    pub pos: Vec<(usize, f64)>,
    pub neg: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitSubproblem {
    pub n: usize,
    /// Upper-triangle triplets of `Q` on the base variables.
    pub quad: Vec<(usize, usize, f64)>,
    pub lin: Vec<f64>,
    pub residuals: Vec<AffineForm>,
    pub squares: Vec<SquareTerm>,
    /// `(j, weight)` adds `weight * |x_j|`; zero weights are skipped.
    pub abs_penalties: Vec<(usize, f64)>,
    /// `form(x) <= 0`.
    pub ineq: Vec<AffineForm>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Ridge on the split variables.
    pub split_ridge: f64,
}

/// Index map of the lifted variable vector `[x | t_plus | t_minus | p | m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitLayout {
    pub n_base: usize,
    pub n_res: usize,
    /// `(j, p_index, m_index)` for each split absolute value.
    pub abs: Vec<(usize, usize, usize)>,
    pub total: usize,
    /// Constant dropped from the objective.
    pub constant: f64,
}

impl SplitLayout {
    pub fn pos(&self, k: usize) -> usize {
        self.n_base + k
    }

    pub fn neg(&self, k: usize) -> usize {
        self.n_base + self.n_res + k
    }

    /// Lifted point with complementary splits.
    pub fn lift(&self, sub: &SplitSubproblem, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.total];
        y[..self.n_base].copy_from_slice(x);
        for (k, r) in sub.residuals.iter().enumerate() {
            let t = r.eval(x);
            y[self.pos(k)] = t.max(0.0);
            y[self.neg(k)] = (-t).max(0.0);
        }
        for &(j, pi, mi) in &self.abs {
            y[pi] = x[j].max(0.0);
            y[mi] = (-x[j]).max(0.0);
        }
        y
    }
}

pub fn split_variables(sub: &SplitSubproblem) -> (ConvexQP, SplitLayout) {
    let n = sub.n;
    let nr = sub.residuals.len();
    let active: Vec<(usize, f64)> = sub
        .abs_penalties
        .iter()
        .cloned()
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let mut abs = Vec::with_capacity(active.len());
    let first_abs = n + 2 * nr;
    for (k, &(j, _)) in active.iter().enumerate() {
        abs.push((j, first_abs + 2 * k, first_abs + 2 * k + 1));
    }
    let total = first_abs + 2 * active.len();
    let mut layout = SplitLayout {
        n_base: n,
        n_res: nr,
        abs,
        total,
        constant: 0.0,
    };

    let mut quad = Vec::new();
    for &(i, j, v) in &sub.quad {
        quad.push((i.min(j), i.max(j), v));
    }
    let mut lin = vec![0.0; total];
    lin[..n].copy_from_slice(&sub.lin);
    for sq in &sub.squares {
        let mut v: Vec<(usize, f64)> = sq.base.terms.clone();
        v.extend(sq.pos.iter().map(|&(k, c)| (layout.pos(k), c)));
        v.extend(sq.neg.iter().map(|&(k, c)| (layout.neg(k), c)));
        let w = sq.weight;
        for (a, &(i, ci)) in v.iter().enumerate() {
            for &(j, cj) in &v[a..] {
                let (r, c) = (i.min(j), i.max(j));
                let val = 2.0 * w * ci * cj;
                quad.push((r, c, val));
            }
            lin[i] += 2.0 * w * sq.base.offset * ci;
        }
        layout.constant += w * sq.base.offset * sq.base.offset;
    }
    if sub.split_ridge > 0.0 {
        for i in n..total {
            quad.push((i, i, sub.split_ridge));
        }
    }
    let mut eq = Vec::new();
    let mut rhs = Vec::new();
    for (k, r) in sub.residuals.iter().enumerate() {
        eq.push((k, layout.pos(k), 1.0));
        eq.push((k, layout.neg(k), -1.0));
        for &(j, c) in &r.terms {
            eq.push((k, j, -c));
        }
        rhs.push(r.offset);
    }
    for (k, (&(j, pi, mi), &(_, w))) in layout.abs.iter().zip(&active).enumerate() {
        let row = nr + k;
        eq.push((row, j, 1.0));
        eq.push((row, pi, -1.0));
        eq.push((row, mi, 1.0));
        rhs.push(0.0);
        lin[pi] += w;
        lin[mi] += w;
    }
    let mut g = Vec::new();
    let mut h = Vec::new();
    for (r, form) in sub.ineq.iter().enumerate() {
        for &(j, c) in &form.terms {
            g.push((r, j, c));
        }
        h.push(-form.offset);
    }
    let mut lower = vec![0.0; total];
    let mut upper = vec![f64::INFINITY; total];
    lower[..n].copy_from_slice(&sub.lower);
    upper[..n].copy_from_slice(&sub.upper);
    let qp = ConvexQP::new(SparseMatrix::symmetric_from_upper(total, &quad), lin)
        .with_equalities(SparseMatrix::from_triplets(rhs.len(), total, &eq), rhs)
        .with_inequalities(SparseMatrix::from_triplets(h.len(), total, &g), h)
        .with_bounds(lower, upper);
    (qp, layout)
}
