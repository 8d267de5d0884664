//! Domain types: actions, datasets, utilities, rules and allocations.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary action, encoded as `+1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "-1")]
    Minus,
    #[serde(rename = "+1")]
    Plus,
}

impl Action {
    /// Sign of a margin with the convention `sign(0) = +1`.
    pub fn from_margin(margin: f64) -> Action {
        if margin >= 0.0 {
            Action::Plus
        } else {
            Action::Minus
        }
    }

    /// Parses an exact `+1` / `-1` value.
    pub fn from_f64(v: f64) -> Option<Action> {
        if v == 1.0 {
            Some(Action::Plus)
        } else if v == -1.0 {
            Some(Action::Minus)
        } else {
            None
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Action::Plus => 1.0,
            Action::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Action {
        match self {
            Action::Plus => Action::Minus,
            Action::Minus => Action::Plus,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Plus => write!(f, "+1"),
            Action::Minus => write!(f, "-1"),
        }
    }
}

/// A single invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{}, row {}", self.message, r),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Samples `(x_i, a_i, z_i, pi(a_i | x_i))`, covariates stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    p: usize,
    x: Vec<f64>,
    a: Vec<Action>,
    z: Vec<f64>,
    propensity: Vec<f64>,
}

/// Raw, unchecked dataset columns. `a` is kept as reals so that invalid
/// actions can be reported instead of rejected at parse time.
#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    pub p: usize,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub z: Vec<f64>,
    pub propensity: Vec<f64>,
}

/// Lists every violated dataset invariant. Row numbers are 1-based.
pub fn validate_dataset(raw: &RawDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = raw.z.len();
    let p = raw.p;
    if n == 0 {
        out.push(Violation {
            row: None,
            message: "no samples".into(),
        });
    }
    if p == 0 {
        out.push(Violation {
            row: None,
            message: "no covariates".into(),
        });
    }
    if raw.a.len() != n || raw.propensity.len() != n || raw.x.len() != n * p {
        out.push(Violation {
            row: None,
            message: format!(
                "column length mismatch (x {}, a {}, z {}, prop {})",
                raw.x.len(),
                raw.a.len(),
                n,
                raw.propensity.len()
            ),
        });
        return out;
    }
    for i in 0..n {
        let row = Some(i + 1);
        if raw.x[i * p..(i + 1) * p].iter().any(|v| !v.is_finite()) {
            out.push(Violation {
                row,
                message: "non-finite covariate".into(),
            });
        }
        if Action::from_f64(raw.a[i]).is_none() {
            out.push(Violation {
                row,
                message: format!("action {} not in {{-1,+1}}", raw.a[i]),
            });
        }
        if !raw.z[i].is_finite() {
            out.push(Violation {
                row,
                message: "non-finite outcome".into(),
            });
        }
        let pr = raw.propensity[i];
        if pr.is_nan() {
            out.push(Violation {
                row,
                message: "non-finite propensity".into(),
            });
        } else if pr <= 0.0 {
            out.push(Violation {
                row,
                message: "nonpositive propensity".into(),
            });
        } else if pr > 1.0 {
            out.push(Violation {
                row,
                message: "propensity above 1".into(),
            });
        }
    }
    out
}

impl Dataset {
    pub fn new(
        p: usize,
        x: Vec<f64>,
        a: Vec<f64>,
        z: Vec<f64>,
        propensity: Vec<f64>,
    ) -> Result<Self> {
        Self::from_raw(RawDataset {
            p,
            x,
            a,
            z,
            propensity,
        })
    }

    pub fn from_raw(raw: RawDataset) -> Result<Self> {
        let violations = validate_dataset(&raw);
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidData(msg.join("; ")));
        }
        let a = raw
            .a
            .iter()
            .map(|&v| Action::from_f64(v).expect("validated"))
            .collect();
        Ok(Dataset {
            n: raw.z.len(),
            p: raw.p,
            x: raw.x,
            a,
            z: raw.z,
            propensity: raw.propensity,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn action(&self, i: usize) -> Action {
        self.a[i]
    }

    pub fn actions(&self) -> &[Action] {
        &self.a
    }

    pub fn outcome(&self, i: usize) -> f64 {
        self.z[i]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.z
    }

    pub fn propensity(&self, i: usize) -> f64 {
        self.propensity[i]
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensity
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            n: idx.len(),
            p: self.p,
            x,
            a: idx.iter().map(|&i| self.a[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            propensity: idx.iter().map(|&i| self.propensity[i]).collect(),
        }
    }

    /// Same samples with outcomes replaced.
    pub fn with_outcomes(&self, z: Vec<f64>) -> Result<Dataset> {
        if z.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite outcome".into()));
        }
        Ok(Dataset { z, ..self.clone() })
    }
}

/// A utility from the family `u(0) = 0`, nondecreasing, concave, `u(t) <= t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Identity,
    /// `u(t) = xi1 max(0, t) - xi2 max(0, -t)` with `0 <= xi1 < 1 < xi2`.
    PiecewiseLinear {
        xi1: f64,
        xi2: f64,
    },
    /// `u(t) = t - t^2 / (2 tau)` for `t <= tau`, `tau / 2` beyond.
    TruncatedQuadratic {
        tau: f64,
    },
}

impl UtilitySpec {
    pub fn piecewise_linear(xi1: f64, xi2: f64) -> Result<Self> {
        let u = UtilitySpec::PiecewiseLinear { xi1, xi2 };
        u.validate()?;
        Ok(u)
    }

    pub fn truncated_quadratic(tau: f64) -> Result<Self> {
        let u = UtilitySpec::TruncatedQuadratic { tau };
        u.validate()?;
        Ok(u)
    }

    /// The utility whose OCE is `CVaR_gamma`.
    pub fn cvar(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "CVaR level {gamma} not in (0,1)"
            )));
        }
        Self::piecewise_linear(0.0, 1.0 / gamma)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Identity => Ok(()),
            UtilitySpec::PiecewiseLinear { xi1, xi2 } => {
                if xi2.is_finite() && (0.0..1.0).contains(&xi1) && 1.0 < xi2 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "piecewise-linear utility needs 0 <= xi1 < 1 < xi2, got xi1={xi1}, xi2={xi2}"
                    )))
                }
            }
            UtilitySpec::TruncatedQuadratic { tau } => {
                if tau.is_finite() && tau > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "truncated-quadratic utility needs tau > 0, got {tau}"
                    )))
                }
            }
        }
    }

    /// Evaluates `u(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            UtilitySpec::Identity => t,
            UtilitySpec::PiecewiseLinear { xi1, xi2 } => xi1 * t.max(0.0) - xi2 * (-t).max(0.0),
            UtilitySpec::TruncatedQuadratic { tau } => {
                if t <= tau {
                    t - t * t / (2.0 * tau)
                } else {
                    tau / 2.0
                }
            }
        }
    }

    /// For the piecewise-linear utility, the CVaR level `(1 - xi1) / (xi2 - xi1)`
    /// at which the OCE maximizer is the quantile.
    pub fn quantile_level(&self) -> Option<f64> {
        match *self {
            UtilitySpec::PiecewiseLinear { xi1, xi2 } => Some((1.0 - xi1) / (xi2 - xi1)),
            _ => None,
        }
    }
}

/// Evaluates `u(t)`. Total function; validity of `u` is the caller's concern.
pub fn utility_eval(u: &UtilitySpec, t: f64) -> f64 {
    u.eval(t)
}

/// Anything that maps covariates to an action.
pub trait DecisionRule {
    fn decide(&self, x: &[f64]) -> Action;
}

impl<F: Fn(&[f64]) -> Action> DecisionRule for F {
    fn decide(&self, x: &[f64]) -> Action {
        self(x)
    }
}

/// A general linear rule `sign(slope^T x + intercept)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRule {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl LinearRule {
    pub fn constant(p: usize, action: Action) -> Self {
        LinearRule {
            slope: vec![0.0; p],
            intercept: action.sign(),
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.slope, x) + self.intercept
    }
}

impl DecisionRule for LinearRule {
    fn decide(&self, x: &[f64]) -> Action {
        Action::from_margin(self.margin(x))
    }
}

/// Rule parameters with the intercept fixed to `+1` or `-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub beta: Vec<f64>,
    pub bias: Action,
}

impl RuleParams {
    pub fn new(beta: Vec<f64>, bias: Action) -> Self {
        RuleParams { beta, bias }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x) + self.bias.sign()
    }

    /// `sign(beta^T x + beta0)`, checking dimensions.
    pub fn try_decide(&self, x: &[f64]) -> Result<Action> {
        if x.len() != self.beta.len() {
            return Err(Error::Dimension {
                expected: self.beta.len(),
                got: x.len(),
            });
        }
        Ok(Action::from_margin(self.margin(x)))
    }

    pub fn to_linear(&self) -> LinearRule {
        LinearRule {
            slope: self.beta.clone(),
            intercept: self.bias.sign(),
        }
    }
}

impl DecisionRule for RuleParams {
    fn decide(&self, x: &[f64]) -> Action {
        Action::from_margin(self.margin(x))
    }
}

/// Affine allocation `alpha(x) = b^T x + b0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocParams {
    pub b: Vec<f64>,
    pub b0: f64,
}

impl AllocParams {
    pub fn zeros(p: usize) -> Self {
        AllocParams {
            b: vec![0.0; p],
            b0: 0.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        dot(&self.b, x) + self.b0
    }

    /// Whether `(b, b0)` lies in the box `[-bound, bound]^{p+1}`.
    pub fn in_box(&self, bound: f64) -> bool {
        self.b
            .iter()
            .chain(std::iter::once(&self.b0))
            .all(|v| v.abs() <= bound)
    }
}

/// Default half-width of the allocation box `S`.
pub const DEFAULT_ALLOC_BOUND: f64 = 1e3;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn piecewise_linear_values() {
        let u = UtilitySpec::piecewise_linear(0.0, 2.0).unwrap();
        assert_eq!(utility_eval(&u, -1.0), -2.0);
        assert_eq!(utility_eval(&u, 3.0), 0.0);
    }

    #[test]
    fn truncated_quadratic_values() {
        let u = UtilitySpec::truncated_quadratic(4.0).unwrap();
        assert_eq!(u.eval(2.0), 1.5);
        assert_eq!(u.eval(5.0), 2.0);
    }

    #[test]
    fn invalid_utilities_rejected() {
        assert!(UtilitySpec::piecewise_linear(1.0, 2.0).is_err());
        assert!(UtilitySpec::piecewise_linear(0.0, 1.0).is_err());
        assert!(UtilitySpec::piecewise_linear(-0.1, 2.0).is_err());
        assert!(UtilitySpec::truncated_quadratic(0.0).is_err());
        assert!(UtilitySpec::cvar(1.0).is_err());
    }

    #[test]
    fn decide_examples() {
        let plus = RuleParams::new(vec![1.0, 0.0], Action::Plus);
        let minus = RuleParams::new(vec![1.0, 0.0], Action::Minus);
        assert_eq!(plus.try_decide(&[0.5, 9.0]).unwrap(), Action::Plus);
        assert_eq!(minus.try_decide(&[0.5, 9.0]).unwrap(), Action::Minus);
        assert!(plus.try_decide(&[0.5]).is_err());
        assert_eq!(Action::from_margin(0.0), Action::Plus);
    }

    #[test]
    fn validation_reports_rows() {
        let raw = RawDataset {
            p: 1,
            x: vec![0.0, 0.0, 0.0],
            a: vec![0.0, 1.0, -1.0],
            z: vec![1.0, 2.0, 3.0],
            propensity: vec![0.5, 0.5, 0.0],
        };
        let v = validate_dataset(&raw);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].row, Some(1));
        assert_eq!(v[1].to_string(), "nonpositive propensity, row 3");

        let clean = RawDataset {
            a: vec![1.0, 1.0, -1.0],
            propensity: vec![0.5; 3],
            ..raw
        };
        assert!(validate_dataset(&clean).is_empty());
        assert!(Dataset::from_raw(clean).is_ok());
    }

    fn utility_strategy() -> impl Strategy<Value = UtilitySpec> {
        prop_oneof![
            Just(UtilitySpec::Identity),
            (0.0..0.99f64, 1.01..10.0f64)
                .prop_map(|(a, b)| UtilitySpec::PiecewiseLinear { xi1: a, xi2: b }),
            (0.01..50.0f64).prop_map(|tau| UtilitySpec::TruncatedQuadratic { tau }),
        ]
    }

    proptest! {
        #[test]
        fn utility_family_properties(u in utility_strategy(), t1 in -100.0..100.0f64, t2 in -100.0..100.0f64) {
            prop_assert_eq!(u.eval(0.0), 0.0);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(u.eval(lo) <= u.eval(hi) + 1e-12);
            prop_assert!(u.eval(t1) <= t1 + 1e-12);
        }

        #[test]
        fn decide_scale_invariant(beta in proptest::collection::vec(-5.0..5.0f64, 3),
                                  b0 in -5.0..5.0f64,
                                  x in proptest::collection::vec(-1.0..1.0f64, 3),
                                  lambda in 0.01..100.0f64) {
            let r = LinearRule { slope: beta.clone(), intercept: b0 };
            let scaled = LinearRule { slope: beta.iter().map(|v| v * lambda).collect(), intercept: b0 * lambda };
            let m = r.margin(&x);
            prop_assume!(m.abs() > 1e-9);
            prop_assert_eq!(r.decide(&x), scaled.decide(&x));
        }
    }
}
