//! Proximal DC algorithm for reverse-convex constrained DC programs.
//!
//! ```text
//!     minimize    h(x) = f(x) - g(x)
//!     subject to  x in X (polyhedral),  max_j (b_ij' x + beta_ij) >= 0  for all i
//! ```
//!
//! Each step linearizes `g` at the current iterate, keeps one affine piece per
//! reverse-convex constraint (the lowest index among the near-maximizers) and
//! solves the resulting strongly convex QP with a proximal term.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::epigraph::{MaxAffineConstraint, FEAS_TOL};
use crate::error::{Error, Result};
use crate::qp::{dot, inf_norm, solve_qp_warm, ConvexQP, QpSettings, QpStatus, SparseMatrix};

pub const DEFAULT_EPS_TIE: f64 = 1e-9;
pub const DEFAULT_TUPLE_CAP: usize = 64;

/// A convex QP whose first `dim` variables are the program variables.
#[derive(Debug, Clone)]
pub struct SubQp {
    pub qp: ConvexQP,
    pub warm: Option<Vec<f64>>,
}

pub trait DcProgram {
    fn dim(&self) -> usize;
    fn f_value(&self, x: &[f64]) -> f64;
    fn g_value(&self, x: &[f64]) -> f64;
    fn g_gradient(&self, x: &[f64]) -> Vec<f64>;

    fn objective(&self, x: &[f64]) -> f64 {
        self.f_value(x) - self.g_value(x)
    }

    fn constraints(&self) -> &[MaxAffineConstraint];

    /// Largest violation of the polyhedral part `X`.
    fn polyhedron_violation(&self, x: &[f64]) -> f64;

    /// `min f(y) - grad' y + (c/2) |y - center|^2` over `X`. The solver adds
    /// the selected constraint pieces as extra inequality rows.
    fn subproblem(&self, center: &[f64], grad: &[f64], c: f64) -> Result<SubQp>;
}

/// Indices of the terms within `eps_tie` of the maximum.
pub fn argmax_indices(c: &MaxAffineConstraint, x: &[f64], eps_tie: f64) -> Vec<usize> {
    let vals = c.term_values(x);
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    vals.iter()
        .enumerate()
        .filter(|(_, v)| **v >= m - eps_tie)
        .map(|(j, _)| j)
        .collect()
}

/// Largest violation of all constraints, polyhedral ones included.
pub fn violation<P: DcProgram + ?Sized>(prog: &P, x: &[f64]) -> f64 {
    prog.constraints()
        .iter()
        .map(|c| -c.value(x))
        .fold(prog.polyhedron_violation(x), f64::max)
}

/// Constraints whose max value lies within `eps_feas` of zero.
pub fn active_set<P: DcProgram + ?Sized>(prog: &P, x: &[f64], eps_feas: f64) -> Result<Vec<usize>> {
    let v = violation(prog, x);
    if v > eps_feas {
        return Err(Error::InfeasibleStart { violation: v });
    }
    Ok(prog
        .constraints()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.value(x).abs() <= eps_feas)
        .map(|(i, _)| i)
        .collect())
}

/// First near-maximizing piece of every constraint.
pub fn lowest_tuple<P: DcProgram + ?Sized>(prog: &P, x: &[f64], eps_tie: f64) -> Vec<usize> {
    prog.constraints()
        .iter()
        .map(|c| argmax_indices(c, x, eps_tie)[0])
        .collect()
}

/// Appends `term(y) >= 0` rows for the chosen pieces.
pub fn with_piece_rows<P: DcProgram + ?Sized>(prog: &P, mut sub: SubQp, choice: &[usize]) -> SubQp {
    let qp = &mut sub.qp;
    let base = qp.ineq_mat.nrows();
    let mut trip: Vec<(usize, usize, f64)> = qp.ineq_mat.triplets().collect();
    let mut rhs = qp.ineq_rhs.clone();
    for (k, (c, &j)) in prog.constraints().iter().zip(choice).enumerate() {
        let term: &AffineForm = &c.terms()[j];
        for &(i, v) in &term.terms {
            trip.push((base + k, i, -v));
        }
        rhs.push(term.offset);
    }
    qp.ineq_mat = SparseMatrix::from_triplets(rhs.len(), qp.n, &trip);
    qp.ineq_rhs = rhs;
    sub
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpStats {
    pub iterations: usize,
    pub residual: f64,
    pub status: QpStatus,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub x: Vec<f64>,
    pub qp: QpStats,
}

/// One proximal DC step from a feasible `x` with the given piece choice.
pub fn dc_step<P: DcProgram + ?Sized>(
    prog: &P,
    x: &[f64],
    c: f64,
    choice: &[usize],
    settings: &QpSettings,
) -> Result<StepResult> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "proximal weight must be positive, got {c}"
        )));
    }
    if choice.len() != prog.constraints().len() {
        return Err(Error::Dimension {
            expected: prog.constraints().len(),
            got: choice.len(),
        });
    }
    let v = violation(prog, x);
    if v > FEAS_TOL {
        return Err(Error::InfeasibleStart { violation: v });
    }
    let grad = prog.g_gradient(x);
    linearized_step(prog, x, &grad, c, choice, settings)
}

fn linearized_step<P: DcProgram + ?Sized>(
    prog: &P,
    x: &[f64],
    grad: &[f64],
    c: f64,
    choice: &[usize],
    settings: &QpSettings,
) -> Result<StepResult> {
    let sub = with_piece_rows(prog, prog.subproblem(x, grad, c)?, choice);
    let sol = solve_qp_warm(&sub.qp, settings, sub.warm.as_deref())?;
    let n = prog.dim();
    Ok(StepResult {
        x: sol.x[..n].to_vec(),
        qp: QpStats {
            iterations: sol.iterations,
            residual: sol.residuals.max(),
            status: sol.status,
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveOptions {
    /// Proximal weight; `None` selects `1e-4 (1 + |grad g(x0)|_inf)`.
    pub c: Option<f64>,
    pub step_tol: f64,
    pub max_iter: usize,
    pub eps_tie: f64,
    pub eps_feas: f64,
    /// Slack allowed in the descent safeguard.
    pub descent_slack: f64,
    pub record_iterates: bool,
    pub qp: QpSettings,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            c: None,
            step_tol: 1e-6,
            max_iter: 200,
            eps_tie: DEFAULT_EPS_TIE,
            eps_feas: FEAS_TOL,
            descent_slack: 1e-9,
            record_iterates: true,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepTolerance,
    MaxIterations,
    /// A QP solution failed the descent or feasibility check; the previous
    /// iterate is returned.
    Safeguard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub objective: f64,
    pub step_norm: f64,
    pub tuple: Vec<usize>,
    pub qp: QpStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub c: f64,
    pub initial_objective: f64,
    pub steps: Vec<TraceStep>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterates: Option<Vec<Vec<f64>>>,
    pub stop: StopReason,
}

impl SolverTrace {
    /// `h(x^0), h(x^1), ...`.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.steps.iter().map(|s| s.objective))
            .collect()
    }

    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct DcSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub trace: SolverTrace,
}

pub fn default_prox_weight<P: DcProgram + ?Sized>(prog: &P, x0: &[f64]) -> f64 {
    1e-4 * (1.0 + inf_norm(&prog.g_gradient(x0)))
}

pub fn solve<P: DcProgram + ?Sized>(
    prog: &P,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<DcSolution> {
    if x0.len() != prog.dim() {
        return Err(Error::Dimension {
            expected: prog.dim(),
            got: x0.len(),
        });
    }
    let v0 = violation(prog, x0);
    if v0 > opts.eps_feas {
        return Err(Error::InfeasibleStart { violation: v0 });
    }
    let c = match opts.c {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => {
            return Err(Error::InvalidParameter(format!(
                "proximal weight must be positive, got {c}"
            )))
        }
        None => default_prox_weight(prog, x0),
    };
    let mut x = x0.to_vec();
    let mut h = prog.objective(&x);
    let mut trace = SolverTrace {
        c,
        initial_objective: h,
        steps: Vec::new(),
        iterates: opts.record_iterates.then(|| vec![x.clone()]),
        stop: StopReason::MaxIterations,
    };
    for iteration in 1..=opts.max_iter {
        let tuple = lowest_tuple(prog, &x, opts.eps_tie);
        let grad = prog.g_gradient(&x);
        let step = linearized_step(prog, &x, &grad, c, &tuple, &opts.qp)?;
        let d: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let step_norm = inf_norm(&d);
        let h_new = prog.objective(&step.x);
        let descent = h_new + 0.5 * c * dot(&d, &d) - h;
        let viol = violation(prog, &step.x);
        if descent > opts.descent_slack || viol > opts.eps_feas {
            warn!(
                "dc step {iteration} rejected (descent excess {descent:e}, violation {viol:e}, qp residual {:e})",
                step.qp.residual
            );
            trace.stop = StopReason::Safeguard;
            break;
        }
        debug!(
            "dc step {iteration}: h = {h_new:.10e}, |dx| = {step_norm:e}, qp iters {}",
            step.qp.iterations
        );
        x = step.x;
        h = h_new;
        trace.steps.push(TraceStep {
            iteration,
            objective: h,
            step_norm,
            tuple,
            qp: step.qp,
        });
        if let Some(it) = trace.iterates.as_mut() {
            it.push(x.clone());
        }
        if step_norm <= opts.step_tol {
            trace.stop = StopReason::StepTolerance;
            break;
        }
    }
    Ok(DcSolution {
        x,
        objective: h,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AStationarity {
    pub certified: bool,
    pub tuples_checked: usize,
    /// The tuple product exceeded the cap; only the lowest-index tuple was tried.
    pub partial: bool,
    /// `h(x) - min` of the linearized program for the best tuple tried.
    pub best_gap: f64,
}

/// Checks whether `x` minimizes the linearized program for some tuple of
/// near-maximizing pieces.
pub fn check_a_stationarity<P: DcProgram + ?Sized>(
    prog: &P,
    x: &[f64],
    tol: f64,
    eps_tie: f64,
    cap: usize,
    settings: &QpSettings,
) -> Result<AStationarity> {
    let v = violation(prog, x);
    if v > FEAS_TOL {
        return Err(Error::InfeasibleStart { violation: v });
    }
    let sets: Vec<Vec<usize>> = prog
        .constraints()
        .iter()
        .map(|c| argmax_indices(c, x, eps_tie))
        .collect();
    let mut count: usize = 1;
    for s in &sets {
        count = count.saturating_mul(s.len());
    }
    let partial = count > cap;
    let grad = prog.g_gradient(x);
    let fx = prog.f_value(x);
    let mut pos = vec![0usize; sets.len()];
    let mut checked = 0;
    let mut best_gap = f64::INFINITY;
    loop {
        let tuple: Vec<usize> = sets.iter().zip(&pos).map(|(s, &k)| s[k]).collect();
        let step = linearized_step(prog, x, &grad, 1e-10, &tuple, settings)?;
        checked += 1;
        let d: Vec<f64> = step.x.iter().zip(x).map(|(a, b)| a - b).collect();
        // h(x) - [f(y) - g(x) - grad'(y - x)]
        let gap = fx - prog.f_value(&step.x) + dot(&grad, &d);
        best_gap = best_gap.min(gap);
        if gap <= tol * (1.0 + fx.abs()) {
            return Ok(AStationarity {
                certified: true,
                tuples_checked: checked,
                partial,
                best_gap,
            });
        }
        if partial {
            break;
        }
        // odometer over the tuple product
        let mut k = 0;
        while k < pos.len() {
            pos[k] += 1;
            if pos[k] < sets[k].len() {
                break;
            }
            pos[k] = 0;
            k += 1;
        }
        if k == pos.len() {
            break;
        }
    }
    Ok(AStationarity {
        certified: false,
        tuples_checked: checked,
        partial,
        best_gap,
    })
}

/// `f = x'Px/2 + p'x`, `g = x'Rx/2 + r'x` with box bounds.
#[derive(Debug, Clone)]
pub struct QuadraticDcProgram {
    pub f_quad: SparseMatrix,
    pub f_lin: Vec<f64>,
    pub g_quad: SparseMatrix,
    pub g_lin: Vec<f64>,
    pub constraints: Vec<MaxAffineConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticDcProgram {
    /// `f = x^2`, `g = 2x`, `|x| >= 1` written as `max(x - 1, -x - 1) >= 0`.
    pub fn toy() -> Self {
        let c = MaxAffineConstraint::new(vec![
            AffineForm::new(vec![(0, 1.0)], -1.0),
            AffineForm::new(vec![(0, -1.0)], -1.0),
        ])
        .expect("nonempty");
        QuadraticDcProgram {
            f_quad: SparseMatrix::from_triplets(1, 1, &[(0, 0, 2.0)]),
            f_lin: vec![0.0],
            g_quad: SparseMatrix::zeros(1, 1),
            g_lin: vec![2.0],
            constraints: vec![c],
            lower: vec![-1e3],
            upper: vec![1e3],
        }
    }
}

impl DcProgram for QuadraticDcProgram {
    fn dim(&self) -> usize {
        self.f_lin.len()
    }

    fn f_value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.f_quad.mul_vec(x)) + dot(&self.f_lin, x)
    }

    fn g_value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.g_quad.mul_vec(x)) + dot(&self.g_lin, x)
    }

    fn g_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.g_quad.mul_vec(x);
        for (gi, r) in g.iter_mut().zip(&self.g_lin) {
            *gi += r;
        }
        g
    }

    fn constraints(&self) -> &[MaxAffineConstraint] {
        &self.constraints
    }

    fn polyhedron_violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .fold(0.0, |m, (v, (l, u))| m.max(l - v).max(v - u))
    }

    fn subproblem(&self, center: &[f64], grad: &[f64], c: f64) -> Result<SubQp> {
        let n = self.dim();
        let mut trip: Vec<(usize, usize, f64)> = self.f_quad.triplets().collect();
        trip.extend((0..n).map(|i| (i, i, c)));
        let lin: Vec<f64> = (0..n)
            .map(|i| self.f_lin[i] - grad[i] - c * center[i])
            .collect();
        let qp = ConvexQP::new(SparseMatrix::from_triplets(n, n, &trip), lin)
            .with_bounds(self.lower.clone(), self.upper.clone());
        Ok(SubQp { qp, warm: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(c: f64) -> SolveOptions {
        SolveOptions {
            c: Some(c),
            step_tol: 1e-8,
            ..Default::default()
        }
    }

    #[test]
    fn argmax_examples() {
        let s = AffineForm::var(1, 1.0);
        let sig = AffineForm::var(0, 1.0);
        let c = MaxAffineConstraint::new(vec![
            sig.scale(2.0).add(&s).add(&AffineForm::constant(-1.0)),
            sig.clone(),
        ])
        .unwrap();
        assert_eq!(argmax_indices(&c, &[1.0, 0.0], 1e-9), vec![0, 1]);
        assert_eq!(argmax_indices(&c, &[0.0, -1.0], 1e-9), vec![1]);
        let toy = QuadraticDcProgram::toy();
        assert_eq!(argmax_indices(&toy.constraints[0], &[2.0], 1e-9), vec![0]);
    }

    #[test]
    fn active_set_examples() {
        let toy = QuadraticDcProgram::toy();
        assert_eq!(active_set(&toy, &[1.0], 1e-8).unwrap(), vec![0]);
        assert!(active_set(&toy, &[2.0], 1e-8).unwrap().is_empty());
        assert_eq!(active_set(&toy, &[1.0 + 1e-10], 1e-8).unwrap(), vec![0]);
        assert!(active_set(&toy, &[0.5], 1e-8).is_err());
    }

    #[test]
    fn toy_steps_follow_recursion() {
        let toy = QuadraticDcProgram::toy();
        let s = QpSettings::default();
        let x1 = dc_step(&toy, &[2.0], 1.0, &[0], &s).unwrap().x[0];
        assert!((x1 - 4.0 / 3.0).abs() < 1e-7);
        let x2 = dc_step(&toy, &[4.0 / 3.0], 1.0, &[0], &s).unwrap().x[0];
        assert!((x2 - 10.0 / 9.0).abs() < 1e-7);
        let x3 = dc_step(&toy, &[1.0], 1.0, &[0], &s).unwrap().x[0];
        assert!((x3 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn toy_solve_both_branches() {
        let toy = QuadraticDcProgram::toy();
        let sol = solve(&toy, &[2.0], &opts(1.0)).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.objective + 1.0).abs() < 1e-6);
        let sol = solve(&toy, &[-2.0], &opts(1.0)).unwrap();
        assert!((sol.x[0] + 1.0).abs() < 1e-6);
        assert!((sol.objective - 3.0).abs() < 1e-6);
    }

    #[test]
    fn toy_certificates() {
        let toy = QuadraticDcProgram::toy();
        let s = QpSettings::default();
        let chk = |x: f64| {
            check_a_stationarity(&toy, &[x], 1e-7, 1e-9, 64, &s)
                .unwrap()
                .certified
        };
        assert!(chk(1.0));
        assert!(chk(-1.0));
        assert!(!chk(2.0));
    }

    #[test]
    fn start_at_stationary_point() {
        let toy = QuadraticDcProgram::toy();
        let sol = solve(&toy, &[1.0], &opts(1.0)).unwrap();
        assert!(sol.trace.iterations() <= 1);
        assert!(solve(&toy, &[0.0], &opts(1.0)).is_err());
    }
}
