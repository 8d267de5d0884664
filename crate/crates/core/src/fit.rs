//! The empirical rule-learning program and the end-to-end fit.
//!
//! Variables `z = (b, b0, beta, sigma_minus, sigma_plus)`. With
//! `t_i = Z_i - b' X_i - b0` and `a_i = (1 - xi1) max(0, t_i) + (xi2 - 1) max(0, -t_i)`
//! the objective is
//!
//! ```text
//! P_alloc(b) + P_rule(beta)
//!   + (1/N) sum_i (Z_i^- + a_i) sigma_minus_i / pi_i
//!   - (1/|N+|) sum_{j in N+} Z_j^+ sigma_plus_j / pi_j
//! ```
//!
//! where `sigma_minus_i >= 1(s_i > 0)`, `sigma_plus_j <= 1(s_j >= 0)` and
//! `s_i = A_i (beta' X_i + bias)` with `bias = +-1` fixed per run. The products
//! `a_i sigma_i` are split as `((a + tau sigma)^2 - tau^2 sigma^2 - a^2) / (2 tau)`, and
//! `P(x) = lambda phi |x| - rho(x)` with a smooth convex `rho`.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::dc::{self, AStationarity, DcProgram, SolveOptions, SolverTrace, StopReason, SubQp};
use crate::epigraph::{expand_to_reverse_convex, DcConstraint, MaxAffineConstraint};
use crate::error::{Error, Result};
use crate::model::{
    dot, Action, AllocParams, Dataset, RuleParams, UtilitySpec, DEFAULT_ALLOC_BOUND,
};
use crate::oce::{empirical_oce, SampleSet};
use crate::qp::{split_variables, ConvexQP, QpSettings, SplitLayout, SplitSubproblem, SquareTerm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Surrogate {
    /// `rho = 0`: plain weighted l1.
    PlainL1,
    /// `rho(x) = x^2 / (2a)` on `|x| <= a phi lambda`, linear beyond.
    McpLike { a: f64 },
}

impl Surrogate {
    fn rho(&self, x: f64, w: f64) -> f64 {
        match *self {
            Surrogate::PlainL1 => 0.0,
            Surrogate::McpLike { a } => {
                if x.abs() <= a * w {
                    x * x / (2.0 * a)
                } else {
                    w * x.abs() - a * w * w / 2.0
                }
            }
        }
    }

    fn rho_grad(&self, x: f64, w: f64) -> f64 {
        match *self {
            Surrogate::PlainL1 => 0.0,
            Surrogate::McpLike { a } => {
                if x.abs() <= a * w {
                    x / a
                } else {
                    w * x.signum()
                }
            }
        }
    }

    /// `w |x| - rho(x)` with `w = lambda phi`.
    pub fn penalty(&self, x: f64, w: f64) -> f64 {
        w * x.abs() - self.rho(x, w)
    }
}

impl Default for Surrogate {
    fn default() -> Self {
        Surrogate::McpLike { a: 3.0 }
    }
}

/// How the rule coefficients of a run are initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    Zeros,
    /// Weighted least squares of `Z A` on `(X, 1)` with weights `1/pi`.
    DLearn,
    /// As `DLearn`, with `Z` replaced by `eta + u(Z - eta)` for the sample
    /// OCE maximizer `eta`.
    UtilityDLearn,
    Given {
        beta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub utility: UtilitySpec,
    pub lambda_alloc: f64,
    pub lambda_rule: f64,
    /// Per-coefficient weights; empty means all ones.
    pub phi_alloc: Vec<f64>,
    pub phi_rule: Vec<f64>,
    pub surrogate: Surrogate,
    /// Half-width of the box on `(b, b0)` and `beta`.
    pub bound: f64,
    /// Proximal weight of the DC steps.
    pub prox: f64,
    /// `tau` in `a sigma = ((a + tau sigma)^2 - a^2 - tau^2 sigma^2) / (2 tau)`.
    pub product_scale: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub qp_tol: f64,
    pub starts: Vec<WarmStart>,
    /// Run the A-stationarity check on the selected run.
    pub certify: bool,
    pub record_iterates: bool,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            utility: UtilitySpec::PiecewiseLinear { xi1: 0.0, xi2: 2.0 },
            lambda_alloc: 0.0,
            lambda_rule: 0.0,
            phi_alloc: Vec::new(),
            phi_rule: Vec::new(),
            surrogate: Surrogate::default(),
            bound: DEFAULT_ALLOC_BOUND,
            prox: 1e-2,
            product_scale: 64.0,
            step_tol: 1e-6,
            max_iter: 200,
            qp_tol: 1e-10,
            starts: vec![WarmStart::UtilityDLearn, WarmStart::Zeros],
            certify: true,
            record_iterates: false,
        }
    }
}

impl FitSpec {
    pub fn validate(&self, p: usize) -> Result<(f64, f64)> {
        let (xi1, xi2) = match self.utility {
            UtilitySpec::PiecewiseLinear { xi1, xi2 } => (xi1, xi2),
            _ => {
                return Err(Error::InvalidParameter(
                    "fitting requires a piecewise_linear utility".into(),
                ))
            }
        };
        if !((0.0..1.0).contains(&xi1) && xi2 > 1.0 && xi2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= xi1 < 1 < xi2, got ({xi1}, {xi2})"
            )));
        }
        for (name, l) in [
            ("lambda_alloc", self.lambda_alloc),
            ("lambda_rule", self.lambda_rule),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {l}"
                )));
            }
        }
        for (name, phi) in [("phi_alloc", &self.phi_alloc), ("phi_rule", &self.phi_rule)] {
            if !phi.is_empty() && phi.len() != p {
                return Err(Error::InvalidParameter(format!(
                    "{name} has length {}, expected {p}",
                    phi.len()
                )));
            }
            if phi.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "{name} entries must be positive"
                )));
            }
        }
        if let Surrogate::McpLike { a } = self.surrogate {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "surrogate parameter must be positive, got {a}"
                )));
            }
        }
        if !(self.bound > 0.0) || !(self.prox > 0.0 && self.prox.is_finite()) {
            return Err(Error::InvalidParameter(
                "bound and prox must be positive".into(),
            ));
        }
        if !(self.product_scale > 0.0 && self.product_scale.is_finite()) {
            return Err(Error::InvalidParameter(
                "product_scale must be positive".into(),
            ));
        }
        if self.starts.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one warm start is required".into(),
            ));
        }
        for s in &self.starts {
            if let WarmStart::Given { beta } = s {
                if beta.len() != p || beta.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "given warm start has wrong length or non-finite entries".into(),
                    ));
                }
            }
        }
        Ok((xi1, xi2))
    }
}

/// Index layout of `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub p: usize,
    pub n: usize,
    pub n_plus: usize,
}

impl Layout {
    pub fn b(&self, k: usize) -> usize {
        k
    }
    pub fn b0(&self) -> usize {
        self.p
    }
    pub fn beta(&self, k: usize) -> usize {
        self.p + 1 + k
    }
    pub fn sigma_minus(&self, i: usize) -> usize {
        2 * self.p + 1 + i
    }
    pub fn sigma_plus(&self, j: usize) -> usize {
        2 * self.p + 1 + self.n + j
    }
    pub fn dim(&self) -> usize {
        2 * self.p + 1 + self.n + self.n_plus
    }
}

/// The empirical program for one bias sign.
#[derive(Debug, Clone)]
pub struct EmpiricalProgram {
    data: Dataset,
    layout: Layout,
    bias: Action,
    kappa1: f64,
    kappa2: f64,
    /// Samples with positive outcome, in data order.
    plus_idx: Vec<usize>,
    w_alloc: Vec<f64>,
    w_rule: Vec<f64>,
    surrogate: Surrogate,
    bound: f64,
    tau: f64,
    constraints: Vec<MaxAffineConstraint>,
}

pub fn build_program(data: &Dataset, spec: &FitSpec, bias: Action) -> Result<EmpiricalProgram> {
    let p = data.p();
    let (xi1, xi2) = spec.validate(p)?;
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let plus_idx: Vec<usize> = (0..n).filter(|&i| data.outcome(i) > 0.0).collect();
    let layout = Layout {
        p,
        n,
        n_plus: plus_idx.len(),
    };
    let weights = |phi: &Vec<f64>, lam: f64| -> Vec<f64> {
        (0..p)
            .map(|k| lam * phi.get(k).copied().unwrap_or(1.0))
            .collect()
    };
    let margin = |i: usize| -> AffineForm {
        let a = data.action(i).sign();
        let x = data.row(i);
        AffineForm::new(
            (0..p).map(|k| (layout.beta(k), a * x[k])).collect(),
            a * bias.sign(),
        )
    };
    let mut constraints = Vec::with_capacity(2 * n + 2 * plus_idx.len());
    for i in 0..n {
        let dc = DcConstraint::epigraph(&AffineForm::var(layout.sigma_minus(i), 1.0), &margin(i));
        constraints.extend(expand_to_reverse_convex(&dc));
    }
    for (j, &i) in plus_idx.iter().enumerate() {
        let dc = DcConstraint::hypograph(&AffineForm::var(layout.sigma_plus(j), 1.0), &margin(i));
        constraints.extend(expand_to_reverse_convex(&dc));
    }
    Ok(EmpiricalProgram {
        data: data.clone(),
        layout,
        bias,
        kappa1: 1.0 - xi1,
        kappa2: xi2 - 1.0,
        plus_idx,
        w_alloc: weights(&spec.phi_alloc, spec.lambda_alloc),
        w_rule: weights(&spec.phi_rule, spec.lambda_rule),
        surrogate: spec.surrogate,
        bound: spec.bound,
        tau: spec.product_scale,
        constraints,
    })
}

impl EmpiricalProgram {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn bias(&self) -> Action {
        self.bias
    }

    fn residual(&self, z: &[f64], i: usize) -> f64 {
        let p = self.layout.p;
        self.data.outcome(i) - dot(&z[..p], self.data.row(i)) - z[self.layout.b0()]
    }

    fn bracket(&self, t: f64) -> f64 {
        self.kappa1 * t.max(0.0) + self.kappa2 * (-t).max(0.0)
    }

    /// `s_i` for sample `i`.
    pub fn margin(&self, z: &[f64], i: usize) -> f64 {
        let p = self.layout.p;
        let beta = &z[self.layout.beta(0)..self.layout.beta(0) + p];
        self.data.action(i).sign() * (dot(beta, self.data.row(i)) + self.bias.sign())
    }

    fn nf(&self) -> f64 {
        self.data.n() as f64
    }

    fn penalty_weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let l = self.layout;
        (0..l.p)
            .map(move |k| (l.b(k), self.w_alloc[k]))
            .chain((0..l.p).map(move |k| (l.beta(k), self.w_rule[k])))
    }

    fn linear_sigma(&self, z: &[f64]) -> f64 {
        let l = self.layout;
        let nf = self.nf();
        let mut acc = 0.0;
        for i in 0..l.n {
            let zm = (-self.data.outcome(i)).max(0.0);
            acc += zm * z[l.sigma_minus(i)] / (nf * self.data.propensity(i));
        }
        if l.n_plus > 0 {
            let np = l.n_plus as f64;
            for (j, &i) in self.plus_idx.iter().enumerate() {
                acc -= self.data.outcome(i) * z[l.sigma_plus(j)] / (np * self.data.propensity(i));
            }
        }
        acc
    }

    /// Objective with indicators in place of `sigma`.
    pub fn objective_direct(&self, rule: &RuleParams, alloc: &AllocParams) -> f64 {
        let l = self.layout;
        let mut z = vec![0.0; l.dim()];
        z[..l.p].copy_from_slice(&alloc.b);
        z[l.b0()] = alloc.b0;
        z[l.beta(0)..l.beta(0) + l.p].copy_from_slice(&rule.beta);
        let bias_prog = EmpiricalProgram {
            bias: rule.bias,
            ..self.clone()
        };
        for i in 0..l.n {
            z[l.sigma_minus(i)] = if bias_prog.margin(&z, i) > 0.0 {
                1.0
            } else {
                0.0
            };
        }
        for (j, &i) in self.plus_idx.iter().enumerate() {
            z[l.sigma_plus(j)] = if bias_prog.margin(&z, i) >= 0.0 {
                1.0
            } else {
                0.0
            };
        }
        bias_prog.objective(&z)
    }

    /// Feasible point with indicator-valued `sigma`.
    pub fn initial_point(&self, beta: &[f64], alloc: &AllocParams) -> Vec<f64> {
        let l = self.layout;
        let mut z = vec![0.0; l.dim()];
        for k in 0..l.p {
            z[l.b(k)] = alloc.b[k].clamp(-self.bound, self.bound);
            z[l.beta(k)] = beta[k].clamp(-self.bound, self.bound);
        }
        z[l.b0()] = alloc.b0.clamp(-self.bound, self.bound);
        for i in 0..l.n {
            z[l.sigma_minus(i)] = if self.margin(&z, i) > 0.0 { 1.0 } else { 0.0 };
        }
        for (j, &i) in self.plus_idx.iter().enumerate() {
            z[l.sigma_plus(j)] = if self.margin(&z, i) >= 0.0 { 1.0 } else { 0.0 };
        }
        z
    }

    pub fn rule(&self, z: &[f64]) -> RuleParams {
        let l = self.layout;
        RuleParams::new(z[l.beta(0)..l.beta(0) + l.p].to_vec(), self.bias)
    }

    pub fn alloc(&self, z: &[f64]) -> AllocParams {
        AllocParams {
            b: z[..self.layout.p].to_vec(),
            b0: z[self.layout.b0()],
        }
    }

    fn split_problem(&self, center: &[f64], grad: &[f64], c: f64) -> SplitSubproblem {
        let l = self.layout;
        let dim = l.dim();
        let nf = self.nf();
        let mut lin: Vec<f64> = (0..dim).map(|k| -grad[k] - c * center[k]).collect();
        for i in 0..l.n {
            lin[l.sigma_minus(i)] +=
                (-self.data.outcome(i)).max(0.0) / (nf * self.data.propensity(i));
        }
        if l.n_plus > 0 {
            let np = l.n_plus as f64;
            for (j, &i) in self.plus_idx.iter().enumerate() {
                lin[l.sigma_plus(j)] -= self.data.outcome(i) / (np * self.data.propensity(i));
            }
        }
        let residuals = (0..l.n)
            .map(|i| {
                let x = self.data.row(i);
                let mut terms: Vec<(usize, f64)> = (0..l.p).map(|k| (l.b(k), -x[k])).collect();
                terms.push((l.b0(), -1.0));
                AffineForm::new(terms, self.data.outcome(i))
            })
            .collect();
        let squares = (0..l.n)
            .map(|i| SquareTerm {
                weight: 1.0 / (2.0 * self.tau * nf * self.data.propensity(i)),
                base: AffineForm::var(l.sigma_minus(i), self.tau),
                pos: vec![(i, self.kappa1)],
                neg: vec![(i, self.kappa2)],
            })
            .collect();
        let (lower, upper) = self.bounds();
        SplitSubproblem {
            n: dim,
            quad: (0..dim).map(|k| (k, k, c)).collect(),
            lin,
            residuals,
            squares,
            abs_penalties: self.penalty_weights().collect(),
            ineq: Vec::new(),
            lower,
            upper,
            split_ridge: 1e-12,
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let mut lower = vec![f64::NEG_INFINITY; l.dim()];
        let mut upper = vec![f64::INFINITY; l.dim()];
        for k in 0..l.p {
            for idx in [l.b(k), l.beta(k)] {
                lower[idx] = -self.bound;
                upper[idx] = self.bound;
            }
        }
        lower[l.b0()] = -self.bound;
        upper[l.b0()] = self.bound;
        // implied by the indicator constraints
        for i in 0..l.n {
            lower[l.sigma_minus(i)] = 0.0;
        }
        for j in 0..l.n_plus {
            upper[l.sigma_plus(j)] = 1.0;
        }
        (lower, upper)
    }

    /// The QP of one step, with the split layout.
    pub fn split_qp(
        &self,
        center: &[f64],
        grad: &[f64],
        c: f64,
    ) -> (SplitSubproblem, ConvexQP, SplitLayout) {
        let sub = self.split_problem(center, grad, c);
        let (qp, layout) = split_variables(&sub);
        (sub, qp, layout)
    }
}

impl DcProgram for EmpiricalProgram {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn f_value(&self, z: &[f64]) -> f64 {
        let l = self.layout;
        let nf = self.nf();
        let mut acc: f64 = self.penalty_weights().map(|(k, w)| w * z[k].abs()).sum();
        acc += self.linear_sigma(z);
        for i in 0..l.n {
            let v = self.bracket(self.residual(z, i)) + self.tau * z[l.sigma_minus(i)];
            acc += v * v / (2.0 * self.tau * nf * self.data.propensity(i));
        }
        acc
    }

    fn g_value(&self, z: &[f64]) -> f64 {
        let l = self.layout;
        let nf = self.nf();
        let mut acc: f64 = self
            .penalty_weights()
            .map(|(k, w)| self.surrogate.rho(z[k], w))
            .sum();
        for i in 0..l.n {
            let a = self.bracket(self.residual(z, i));
            let s = self.tau * z[l.sigma_minus(i)];
            acc += (s * s + a * a) / (2.0 * self.tau * nf * self.data.propensity(i));
        }
        acc
    }

    fn g_gradient(&self, z: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let nf = self.nf();
        let mut g = vec![0.0; l.dim()];
        for (k, w) in self.penalty_weights() {
            g[k] = self.surrogate.rho_grad(z[k], w);
        }
        for i in 0..l.n {
            let wi = 1.0 / (nf * self.data.propensity(i));
            let t = self.residual(z, i);
            // d/dt of a^2 / 2
            let da = (self.kappa1 * self.kappa1 * t.max(0.0)
                - self.kappa2 * self.kappa2 * (-t).max(0.0))
                / self.tau;
            let x = self.data.row(i);
            for k in 0..l.p {
                g[l.b(k)] -= wi * da * x[k];
            }
            g[l.b0()] -= wi * da;
            g[l.sigma_minus(i)] = wi * self.tau * z[l.sigma_minus(i)];
        }
        g
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let l = self.layout;
        let nf = self.nf();
        let mut acc: f64 = self
            .penalty_weights()
            .map(|(k, w)| self.surrogate.penalty(z[k], w))
            .sum();
        acc += self.linear_sigma(z);
        for i in 0..l.n {
            let a = self.bracket(self.residual(z, i));
            acc += a * z[l.sigma_minus(i)] / (nf * self.data.propensity(i));
        }
        acc
    }

    fn constraints(&self) -> &[MaxAffineConstraint] {
        &self.constraints
    }

    fn polyhedron_violation(&self, z: &[f64]) -> f64 {
        let (lower, upper) = self.bounds();
        z.iter()
            .zip(lower.iter().zip(&upper))
            .fold(0.0, |m, (v, (lo, hi))| m.max(lo - v).max(v - hi))
    }

    fn subproblem(&self, center: &[f64], grad: &[f64], c: f64) -> Result<SubQp> {
        let sub = self.split_problem(center, grad, c);
        let (qp, layout) = split_variables(&sub);
        let warm = layout.lift(&sub, center);
        Ok(SubQp {
            qp,
            warm: Some(warm),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRun {
    pub start: WarmStart,
    pub bias: Action,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: SolverTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedIDR {
    pub rule: RuleParams,
    pub alloc: AllocParams,
    /// Final value of the epigraph objective.
    pub objective: f64,
    /// Objective with the indicators evaluated at the fitted `(rule, alloc)`.
    pub objective_direct: f64,
    /// Best final objective per bias sign, `[+1, -1]`.
    pub bias_objectives: [f64; 2],
    pub runs: Vec<FitRun>,
    pub selected_run: usize,
    pub certificate: Option<AStationarity>,
}

impl FittedIDR {
    pub fn iterations(&self) -> usize {
        self.runs[self.selected_run].iterations
    }

    pub fn total_iterations(&self) -> usize {
        self.runs.iter().map(|r| r.iterations).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FittedIDR = serde_json::from_str(s)?;
        if f.rule.beta.len() != f.alloc.b.len() {
            return Err(Error::InvalidParameter(
                "rule and allocation dimensions differ".into(),
            ));
        }
        if f.selected_run >= f.runs.len() && !f.runs.is_empty() {
            return Err(Error::InvalidParameter("selected run out of range".into()));
        }
        Ok(f)
    }
}

/// OCE maximizer of the pooled outcomes.
fn pooled_oce_point(data: &Dataset, u: &UtilitySpec) -> Result<f64> {
    let s = SampleSet::uniform(data.outcomes().to_vec())?;
    Ok(empirical_oce(&s, u, None)?.maximizer)
}

fn start_beta(data: &Dataset, spec: &FitSpec, start: &WarmStart, eta: f64) -> Result<Vec<f64>> {
    let p = data.p();
    let (slope, intercept) = match start {
        WarmStart::Zeros => return Ok(vec![0.0; p]),
        WarmStart::Given { beta } => return Ok(beta.clone()),
        WarmStart::DLearn => crate::bench::dlearn_coefficients(data, data.outcomes(), 0.0)?,
        WarmStart::UtilityDLearn => {
            let v: Vec<f64> = data
                .outcomes()
                .iter()
                .map(|z| eta + spec.utility.eval(z - eta))
                .collect();
            crate::bench::dlearn_coefficients(data, &v, 0.0)?
        }
    };
    let scale = intercept
        .abs()
        .max(1e-3 * slope.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    if scale == 0.0 || !scale.is_finite() {
        return Ok(vec![0.0; p]);
    }
    Ok(slope.iter().map(|v| v / scale).collect())
}

pub fn fit(data: &Dataset, spec: &FitSpec) -> Result<FittedIDR> {
    spec.validate(data.p())?;
    if data.n() == 0 {
        return Err(Error::EmptySample);
    }
    let eta = pooled_oce_point(data, &spec.utility)?;
    let alloc0 = AllocParams {
        b: vec![0.0; data.p()],
        b0: eta.clamp(-spec.bound, spec.bound),
    };
    let opts = SolveOptions {
        c: Some(spec.prox),
        step_tol: spec.step_tol,
        max_iter: spec.max_iter,
        record_iterates: spec.record_iterates,
        qp: QpSettings {
            tol: spec.qp_tol,
            ..QpSettings::default()
        },
        ..SolveOptions::default()
    };
    let programs = [
        build_program(data, spec, Action::Plus)?,
        build_program(data, spec, Action::Minus)?,
    ];
    let mut runs = Vec::new();
    let mut points = Vec::new();
    for start in &spec.starts {
        let beta = start_beta(data, spec, start, eta)?;
        for prog in &programs {
            let z0 = prog.initial_point(&beta, &alloc0);
            let sol = dc::solve(prog, &z0, &opts)?;
            if sol.trace.stop != StopReason::StepTolerance {
                warn!(
                    "fit run ({start:?}, bias {}) stopped by {:?}",
                    prog.bias(),
                    sol.trace.stop
                );
            }
            runs.push(FitRun {
                start: start.clone(),
                bias: prog.bias(),
                objective: sol.objective,
                iterations: sol.trace.iterations(),
                stop: sol.trace.stop,
                trace: sol.trace,
            });
            points.push(sol.x);
        }
    }
    // smallest final objective; ties keep the earlier run
    let mut best = 0;
    for (k, r) in runs.iter().enumerate() {
        if r.objective < runs[best].objective {
            best = k;
        }
    }
    let prog = &programs[if runs[best].bias == Action::Plus {
        0
    } else {
        1
    }];
    let z = &points[best];
    let rule = prog.rule(z);
    let alloc = prog.alloc(z);
    let best_for = |b: Action| {
        runs.iter()
            .filter(|r| r.bias == b)
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min)
    };
    let certificate = if spec.certify {
        Some(dc::check_a_stationarity(
            prog,
            z,
            1e-6,
            opts.eps_tie,
            dc::DEFAULT_TUPLE_CAP,
            &opts.qp,
        )?)
    } else {
        None
    };
    info!(
        "fit selected run {best} with objective {:.6e}",
        runs[best].objective
    );
    Ok(FittedIDR {
        objective_direct: prog.objective_direct(&rule, &alloc),
        objective: runs[best].objective,
        bias_objectives: [best_for(Action::Plus), best_for(Action::Minus)],
        rule,
        alloc,
        runs,
        selected_run: best,
        certificate,
    })
}

/// Worst-case descent and feasibility over recorded DC iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcCheck {
    /// `max h(x^{k+1}) + c/2 |dx|^2 - h(x^k)`.
    pub max_descent_excess: f64,
    pub max_violation: f64,
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub runs: usize,
}

/// Recomputes objectives and constraint violations from the iterates stored
/// in every run; requires `record_iterates`.
pub fn verify_runs(data: &Dataset, spec: &FitSpec, fitted: &FittedIDR) -> Result<DcCheck> {
    let mut out = DcCheck {
        max_descent_excess: f64::NEG_INFINITY,
        max_violation: 0.0,
        max_iterations: 0,
        total_iterations: 0,
        runs: 0,
    };
    let programs = [
        build_program(data, spec, Action::Plus)?,
        build_program(data, spec, Action::Minus)?,
    ];
    for run in &fitted.runs {
        let prog = &programs[if run.bias == Action::Plus { 0 } else { 1 }];
        let its = run.trace.iterates.as_ref().ok_or_else(|| {
            Error::InvalidParameter("runs were fitted without recorded iterates".into())
        })?;
        let c = run.trace.c;
        for x in its {
            out.max_violation = out.max_violation.max(dc::violation(prog, x));
        }
        for w in its.windows(2) {
            let d2: f64 = w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) * (a - b)).sum();
            let excess = prog.objective(&w[1]) + 0.5 * c * d2 - prog.objective(&w[0]);
            out.max_descent_excess = out.max_descent_excess.max(excess);
        }
        out.max_iterations = out.max_iterations.max(run.iterations);
        out.total_iterations += run.iterations;
        out.runs += 1;
    }
    Ok(out)
}

/// Indicator objective at `(rule, alloc)` for `data` under `spec`.
pub fn objective_direct(
    data: &Dataset,
    spec: &FitSpec,
    rule: &RuleParams,
    alloc: &AllocParams,
) -> Result<f64> {
    if rule.beta.len() != data.p() || alloc.b.len() != data.p() {
        return Err(Error::Dimension {
            expected: data.p(),
            got: rule.beta.len().min(alloc.b.len()),
        });
    }
    Ok(build_program(data, spec, rule.bias)?.objective_direct(rule, alloc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_point(z: f64) -> Dataset {
        Dataset::new(1, vec![0.5], vec![1.0], vec![z], vec![0.5]).unwrap()
    }

    fn spec0() -> FitSpec {
        FitSpec {
            surrogate: Surrogate::PlainL1,
            ..FitSpec::default()
        }
    }

    #[test]
    fn layout_indices() {
        let l = Layout {
            p: 2,
            n: 3,
            n_plus: 1,
        };
        assert_eq!(
            (
                l.b0(),
                l.beta(0),
                l.sigma_minus(0),
                l.sigma_plus(0),
                l.dim()
            ),
            (2, 3, 5, 8, 9)
        );
    }

    #[test]
    fn initial_point_sigma_follows_actions() {
        let d = Dataset::new(
            1,
            vec![0.1, 0.2, 0.3],
            vec![1.0, -1.0, 1.0],
            vec![1.0, -1.0, 2.0],
            vec![0.5; 3],
        )
        .unwrap();
        let prog = build_program(&d, &spec0(), Action::Plus).unwrap();
        let z = prog.initial_point(&[0.0], &AllocParams::zeros(1));
        let l = prog.layout();
        let sm: Vec<f64> = (0..3).map(|i| z[l.sigma_minus(i)]).collect();
        assert_eq!(sm, vec![1.0, 0.0, 1.0]);
        let prog = build_program(&d, &spec0(), Action::Minus).unwrap();
        let z = prog.initial_point(&[0.0], &AllocParams::zeros(1));
        let sm: Vec<f64> = (0..3).map(|i| z[l.sigma_minus(i)]).collect();
        assert_eq!(sm, vec![0.0, 1.0, 0.0]);
        assert!(dc::violation(&prog, &z) <= 0.0);
    }

    #[test]
    fn single_negative_outcome() {
        let f = fit(&one_point(-1.0), &spec0()).unwrap();
        assert!(f.objective.abs() < 1e-6, "{}", f.objective);
        assert!(f.objective_direct.abs() < 1e-6);
    }

    #[test]
    fn single_positive_outcome() {
        let f = fit(&one_point(2.0), &spec0()).unwrap();
        assert!((f.objective + 4.0).abs() < 1e-6, "{}", f.objective);
        assert!((f.objective_direct + 4.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_piecewise_utility() {
        let s = FitSpec {
            utility: UtilitySpec::Identity,
            ..FitSpec::default()
        };
        assert!(fit(&one_point(1.0), &s).is_err());
    }
}
