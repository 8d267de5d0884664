//! Convex quadratic programs and their solver.
//!
//! ```text
//!     minimize    1/2 x' Q x + q' x
//!     subject to  A x  = b
//!                 G x <= h
//!                 lower <= x <= upper
//! ```
//!
//! The solver is a primal-dual interior-point method with Mehrotra
//! predictor-corrector steps. Each Newton system is reduced to a
//! quasidefinite KKT matrix and factored with a sparse `L D L^T`.

mod dump;
mod ipm;
mod ldl;
mod ordering;
mod sparse;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dump::{parse_qp_dump, write_qp_dump};
pub use ldl::LdlFactor;
pub use ordering::minimum_degree;
pub use sparse::SparseMatrix;
pub use split::{split_variables, SplitLayout, SplitSubproblem, SquareTerm};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QpError {
    #[error("problem data invalid: {0}")]
    InvalidProblem(String),
    #[error("primal infeasible (phase-1 residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("unbounded or not strictly convex")]
    Unbounded,
    #[error("no convergence after {iterations} iterations (residuals {residuals:?})")]
    MaxIterations {
        iterations: usize,
        residuals: KktResiduals,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvexQP {
    pub n: usize,
    /// Symmetric, positive semidefinite; both triangles stored.
    pub quad: SparseMatrix,
    pub lin: Vec<f64>,
    pub eq_mat: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq_mat: SparseMatrix,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConvexQP {
    /// Unconstrained problem with the given objective.
    pub fn new(quad: SparseMatrix, lin: Vec<f64>) -> Self {
        let n = lin.len();
        ConvexQP {
            n,
            quad,
            lin,
            eq_mat: SparseMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            ineq_mat: SparseMatrix::zeros(0, n),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_equalities(mut self, mat: SparseMatrix, rhs: Vec<f64>) -> Self {
        self.eq_mat = mat;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_inequalities(mut self, mat: SparseMatrix, rhs: Vec<f64>) -> Self {
        self.ineq_mat = mat;
        self.ineq_rhs = rhs;
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n;
        let bad = |m: String| Err(QpError::InvalidProblem(m));
        if self.quad.nrows() != n || self.quad.ncols() != n {
            return bad(format!(
                "Q is {}x{}, expected {n}x{n}",
                self.quad.nrows(),
                self.quad.ncols()
            ));
        }
        if self.lin.len() != n || self.lower.len() != n || self.upper.len() != n {
            return bad("vector length mismatch".into());
        }
        if self.eq_mat.ncols() != n || self.eq_mat.nrows() != self.eq_rhs.len() {
            return bad("equality block shape mismatch".into());
        }
        if self.ineq_mat.ncols() != n || self.ineq_mat.nrows() != self.ineq_rhs.len() {
            return bad("inequality block shape mismatch".into());
        }
        if !self.quad.is_symmetric(1e-12) {
            return bad("Q not symmetric".into());
        }
        let finite = self.quad.all_finite()
            && self.eq_mat.all_finite()
            && self.ineq_mat.all_finite()
            && self
                .lin
                .iter()
                .chain(&self.eq_rhs)
                .chain(&self.ineq_rhs)
                .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite data".into());
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return bad(format!("bad bounds for variable {i}"));
            }
            if self.lower[i] == f64::INFINITY || self.upper[i] == f64::NEG_INFINITY {
                return bad(format!("bad bounds for variable {i}"));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.quad.mul_vec(x);
        0.5 * dot(x, &qx) + dot(&self.lin, x)
    }

    /// Residuals recomputed from a primal point and multipliers.
    pub fn kkt_residuals(&self, x: &[f64], duals: &QpDuals) -> KktResiduals {
        let mut grad = self.quad.mul_vec(x);
        for (g, q) in grad.iter_mut().zip(&self.lin) {
            *g += q;
        }
        let aty = self.eq_mat.mul_t_vec(&duals.eq);
        let gtz = self.ineq_mat.mul_t_vec(&duals.ineq);
        let mut stat: f64 = 0.0;
        for i in 0..self.n {
            let r = grad[i] + aty[i] + gtz[i] - duals.lower[i] + duals.upper[i];
            stat = stat.max(r.abs());
        }
        let ax = self.eq_mat.mul_vec(x);
        let gx = self.ineq_mat.mul_vec(x);
        let mut primal: f64 = 0.0;
        for (a, b) in ax.iter().zip(&self.eq_rhs) {
            primal = primal.max((a - b).abs());
        }
        let mut comp: f64 = 0.0;
        for (k, (g, h)) in gx.iter().zip(&self.ineq_rhs).enumerate() {
            primal = primal.max(g - h);
            comp = comp.max((duals.ineq[k] * (h - g)).abs());
        }
        let mut dual_sign: f64 = 0.0;
        for i in 0..self.n {
            if self.lower[i].is_finite() {
                primal = primal.max(self.lower[i] - x[i]);
                comp = comp.max((duals.lower[i] * (x[i] - self.lower[i])).abs());
            }
            if self.upper[i].is_finite() {
                primal = primal.max(x[i] - self.upper[i]);
                comp = comp.max((duals.upper[i] * (self.upper[i] - x[i])).abs());
            }
            dual_sign = dual_sign.max(-duals.lower[i]).max(-duals.upper[i]);
        }
        for z in &duals.ineq {
            dual_sign = dual_sign.max(-z);
        }
        // `+ 0.0` normalizes negative zeros
        KktResiduals {
            stationarity: stat + 0.0,
            primal: primal + 0.0,
            complementarity: comp + 0.0,
            dual_sign: dual_sign + 0.0,
        }
    }
}

/// Multipliers: `eq` free, the rest nonnegative.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QpDuals {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Max-norm KKT residuals.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Largest negative part of an inequality multiplier.
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    /// Converged on scaled criteria but the absolute residuals exceed `tol`.
    SolvedInaccurate,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub duals: QpDuals,
    pub residuals: KktResiduals,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Static regularization on the KKT diagonal.
    pub static_reg: f64,
    pub refine_steps: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-8,
            max_iter: 100,
            static_reg: 1e-11,
            refine_steps: 3,
        }
    }
}

/// Solves a strictly convex QP.
pub fn solve_qp(qp: &ConvexQP, settings: &QpSettings) -> Result<QpSolution, QpError> {
    solve_qp_warm(qp, settings, None)
}

/// Like [`solve_qp`], starting the primal iterate from `warm` when given.
pub fn solve_qp_warm(
    qp: &ConvexQP,
    settings: &QpSettings,
    warm: Option<&[f64]>,
) -> Result<QpSolution, QpError> {
    qp.validate()?;
    if let Some(w) = warm {
        if w.len() != qp.n || w.iter().any(|v| !v.is_finite()) {
            return Err(QpError::InvalidProblem(
                "warm start has wrong length or non-finite entries".into(),
            ));
        }
    }
    ipm::solve(qp, settings, warm)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
