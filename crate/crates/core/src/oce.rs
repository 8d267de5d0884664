//! Empirical optimized certainty equivalents.
//!
//! For a finite weighted sample the OCE is `max_eta eta + sum_i w_i u(z_i - eta)`.
//! The objective is concave in `eta`; for piecewise-linear utilities it is
//! piecewise linear with breakpoints at the sample points, so the maximum is
//! found exactly among them. Smooth utilities are handled by bisection on the
//! monotone derivative.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Action, UtilitySpec};

const WEIGHT_TOL: f64 = 1e-12;

/// Finite sample with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl SampleSet {
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite sample value".into()));
        }
        let w = 1.0 / values.len() as f64;
        let weights = vec![w; values.len()];
        Ok(SampleSet { values, weights })
    }

    /// Weights must be positive; they are rescaled to sum to one.
    pub fn weighted(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if weights.len() != values.len() {
            return Err(Error::Dimension {
                expected: values.len(),
                got: weights.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite sample value".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter(
                "sample weights must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let weights = if (total - 1.0).abs() > WEIGHT_TOL {
            weights.iter().map(|w| w / total).collect()
        } else {
            weights
        };
        Ok(SampleSet { values, weights })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Weighted population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * (v - m) * (v - m))
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The same weights with every value shifted by `k`.
    pub fn shifted(&self, k: f64) -> SampleSet {
        SampleSet {
            values: self.values.iter().map(|v| v + k).collect(),
            weights: self.weights.clone(),
        }
    }

    fn sorted_pairs(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = self
            .values
            .iter()
            .cloned()
            .zip(self.weights.iter().cloned())
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs
    }
}

fn check_level(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "level {gamma} not in (0,1)"
        )))
    }
}

/// Smallest value whose cumulative weight reaches `gamma`.
pub fn empirical_quantile(s: &SampleSet, gamma: f64) -> Result<f64> {
    check_level(gamma)?;
    let pairs = s.sorted_pairs();
    let mut cum = 0.0;
    for &(v, w) in &pairs {
        cum += w;
        if cum >= gamma - WEIGHT_TOL {
            return Ok(v);
        }
    }
    pairs.last().map(|p| p.0).ok_or(Error::EmptySample)
}

/// Weighted average of the lower `gamma`-tail, splitting the boundary atom.
pub fn empirical_cvar(s: &SampleSet, gamma: f64) -> Result<f64> {
    check_level(gamma)?;
    let mut remaining = gamma;
    let mut acc = 0.0;
    for (v, w) in s.sorted_pairs() {
        let take = w.min(remaining);
        acc += take * v;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    Ok(acc / gamma)
}

/// OCE value together with the smallest maximizing `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OceResult {
    pub value: f64,
    pub maximizer: f64,
}

/// `eta + E u(Z - eta)` at a fixed `eta`.
pub fn oce_objective(s: &SampleSet, u: &UtilitySpec, eta: f64) -> f64 {
    eta + s
        .values
        .iter()
        .zip(&s.weights)
        .map(|(z, w)| w * u.eval(z - eta))
        .sum::<f64>()
}

/// Maximizes `eta + E u(Z - eta)` over `eta` in `bounds` (default: the sample range).
pub fn empirical_oce(
    s: &SampleSet,
    u: &UtilitySpec,
    bounds: Option<(f64, f64)>,
) -> Result<OceResult> {
    u.validate()?;
    let (lo, hi) = match bounds {
        Some((lo, hi)) => {
            if !(lo <= s.min() && hi >= s.max()) {
                return Err(Error::InvalidParameter(format!(
                    "eta bounds [{lo}, {hi}] do not cover the sample range [{}, {}]",
                    s.min(),
                    s.max()
                )));
            }
            (lo, hi)
        }
        None => (s.min(), s.max()),
    };
    match *u {
        UtilitySpec::Identity => Ok(OceResult {
            value: s.mean(),
            maximizer: lo,
        }),
        UtilitySpec::PiecewiseLinear { xi1, xi2 } => Ok(piecewise_linear_oce(s, xi1, xi2, u)),
        UtilitySpec::TruncatedQuadratic { tau } => Ok(smooth_oce(s, u, tau, lo, hi)),
    }
}

fn piecewise_linear_oce(s: &SampleSet, xi1: f64, xi2: f64, u: &UtilitySpec) -> OceResult {
    let pairs = s.sorted_pairs();
    let n = pairs.len();
    // prefix sums over strictly smaller sorted positions
    let mut w_below = vec![0.0; n + 1];
    let mut wz_below = vec![0.0; n + 1];
    for (k, &(v, w)) in pairs.iter().enumerate() {
        w_below[k + 1] = w_below[k] + w;
        wz_below[k + 1] = wz_below[k] + w * v;
    }
    let (w_tot, wz_tot) = (w_below[n], wz_below[n]);
    let candidate = |k: usize| {
        let eta = pairs[k].0;
        let above = (wz_tot - wz_below[k + 1]) - eta * (w_tot - w_below[k + 1]);
        let below = eta * w_below[k] - wz_below[k];
        eta + xi1 * above - xi2 * below
    };
    let values: Vec<f64> = (0..n).map(candidate).collect();
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * (1.0 + best.abs());
    let k = values.iter().position(|&v| v >= best - slack).unwrap_or(0);
    let eta = pairs[k].0;
    OceResult {
        value: oce_objective(s, u, eta),
        maximizer: eta,
    }
}

fn smooth_oce(s: &SampleSet, u: &UtilitySpec, tau: f64, lo: f64, hi: f64) -> OceResult {
    // derivative 1 - sum w u'(z - eta) is nonincreasing in eta
    let slope = |eta: f64| {
        1.0 - s
            .values
            .iter()
            .zip(&s.weights)
            .map(|(z, w)| w * (1.0 - (z - eta) / tau).max(0.0))
            .sum::<f64>()
    };
    let (mut a, mut b) = (lo, hi);
    if slope(a) <= 0.0 {
        return OceResult {
            value: oce_objective(s, u, a),
            maximizer: a,
        };
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if slope(mid) <= 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    OceResult {
        value: oce_objective(s, u, b),
        maximizer: b,
    }
}

/// `mean - var / (2 tau)`, the OCE under the truncated-quadratic utility when
/// `tau` covers the sample range.
pub fn mean_variance_oce(s: &SampleSet, tau: f64) -> Result<f64> {
    let range = s.max() - s.min();
    if !(tau.is_finite() && tau > 0.0 && tau >= range) {
        return Err(Error::InvalidParameter(format!(
            "tau = {tau} is smaller than the sample range {range}"
        )));
    }
    Ok(s.mean() - s.variance() / (2.0 * tau))
}

/// The action with the larger per-action OCE; ties go to `+1`.
pub fn explicit_optimal_action(
    per_action: &BTreeMap<Action, SampleSet>,
    u: &UtilitySpec,
) -> Result<Action> {
    let plus = per_action
        .get(&Action::Plus)
        .ok_or_else(|| Error::InvalidParameter("no samples for action +1".into()))?;
    let minus = per_action
        .get(&Action::Minus)
        .ok_or_else(|| Error::InvalidParameter("no samples for action -1".into()))?;
    let vp = empirical_oce(plus, u, None)?.value;
    let vm = empirical_oce(minus, u, None)?.value;
    Ok(if vp >= vm {
        Action::Plus
    } else {
        Action::Minus
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[f64]) -> SampleSet {
        SampleSet::uniform(v.to_vec()).unwrap()
    }

    /// Dense grid sup of `eta + E u(Z - eta)` followed by a fine local pass.
    fn grid_sup(s: &SampleSet, u: &UtilitySpec) -> f64 {
        let (lo, hi) = (s.min() - 1.0, s.max() + 1.0);
        let mut best = f64::NEG_INFINITY;
        let steps = 20_000;
        for k in 0..=steps {
            let eta = lo + (hi - lo) * k as f64 / steps as f64;
            best = best.max(oce_objective(s, u, eta));
        }
        for &v in s.values() {
            best = best.max(oce_objective(s, u, v));
        }
        best
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(
            empirical_quantile(&set(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap(),
            2.0
        );
        assert_eq!(empirical_quantile(&set(&[5.0]), 0.3).unwrap(), 5.0);
        assert_eq!(
            empirical_quantile(&set(&[1.0, 1.0, 1.0]), 0.9).unwrap(),
            1.0
        );
        assert!(empirical_quantile(&set(&[1.0]), 1.0).is_err());
        assert!(SampleSet::uniform(vec![]).is_err());
    }

    #[test]
    fn cvar_examples() {
        let s = set(&[1.0, 2.0, 3.0, 4.0]);
        assert!((empirical_cvar(&s, 0.5).unwrap() - 1.5).abs() < 1e-12);
        let cvar_half_grid = grid_sup(&s, &UtilitySpec::cvar(0.5).unwrap());
        assert!((cvar_half_grid - 1.5).abs() < 1e-9);
        assert!((empirical_cvar(&set(&[7.0; 5]), 0.3).unwrap() - 7.0).abs() < 1e-12);
        assert!((empirical_cvar(&s, 0.999_999).unwrap() - 2.5).abs() < 1e-5);
    }

    #[test]
    fn oce_examples() {
        let s = set(&[1.0, 2.0, 3.0, 4.0]);
        let pw = UtilitySpec::piecewise_linear(0.0, 2.0).unwrap();
        let r = empirical_oce(&s, &pw, None).unwrap();
        assert!((r.value - 1.5).abs() < 1e-12);
        assert!((r.value - grid_sup(&s, &pw)).abs() < 1e-9);
        assert_eq!(r.maximizer, 2.0);
        assert!(
            (empirical_oce(&s, &UtilitySpec::Identity, None)
                .unwrap()
                .value
                - 2.5)
                .abs()
                < 1e-12
        );
        let zeros = set(&[0.0; 4]);
        for u in [
            pw,
            UtilitySpec::Identity,
            UtilitySpec::TruncatedQuadratic { tau: 1.0 },
        ] {
            assert_eq!(empirical_oce(&zeros, &u, None).unwrap().value, 0.0);
        }
        assert!(empirical_oce(&s, &pw, Some((1.5, 4.0))).is_err());
    }

    #[test]
    fn mean_variance_examples() {
        let s = set(&[1.0, 3.0]);
        assert!((mean_variance_oce(&s, 2.0).unwrap() - 1.75).abs() < 1e-12);
        let tq = UtilitySpec::TruncatedQuadratic { tau: 2.0 };
        assert!((grid_sup(&s, &tq) - 1.75).abs() < 1e-8);
        let s = set(&[0.0, 2.0, 4.0]);
        let expected = 2.0 - 1.0 / 3.0;
        assert!((mean_variance_oce(&s, 4.0).unwrap() - expected).abs() < 1e-12);
        assert!(
            (grid_sup(&s, &UtilitySpec::TruncatedQuadratic { tau: 4.0 }) - expected).abs() < 1e-8
        );
        assert_eq!(mean_variance_oce(&set(&[3.0, 3.0]), 0.5).unwrap(), 3.0);
        assert!(mean_variance_oce(&s, 3.0).is_err());
    }

    #[test]
    fn explicit_action_examples() {
        let mut m = BTreeMap::new();
        m.insert(Action::Plus, set(&[3.0]));
        m.insert(Action::Minus, set(&[1.0]));
        assert_eq!(
            explicit_optimal_action(&m, &UtilitySpec::Identity).unwrap(),
            Action::Plus
        );

        let pw = UtilitySpec::piecewise_linear(0.0, 2.0).unwrap();
        m.insert(Action::Plus, set(&[0.0, 10.0]));
        m.insert(Action::Minus, set(&[4.0, 4.0]));
        assert!((grid_sup(&m[&Action::Plus], &pw) - 0.0).abs() < 1e-9);
        assert!((grid_sup(&m[&Action::Minus], &pw) - 4.0).abs() < 1e-9);
        assert_eq!(explicit_optimal_action(&m, &pw).unwrap(), Action::Minus);

        m.insert(Action::Plus, set(&[4.0, 4.0]));
        assert_eq!(explicit_optimal_action(&m, &pw).unwrap(), Action::Plus);
        m.remove(&Action::Minus);
        assert!(explicit_optimal_action(&m, &pw).is_err());
    }

    fn utility() -> impl Strategy<Value = UtilitySpec> {
        prop_oneof![
            Just(UtilitySpec::Identity),
            (0.0..0.9f64, 1.1..6.0f64)
                .prop_map(|(a, b)| UtilitySpec::PiecewiseLinear { xi1: a, xi2: b }),
            (0.5..20.0f64).prop_map(|tau| UtilitySpec::TruncatedQuadratic { tau }),
        ]
    }

    proptest! {
        #[test]
        fn shift_additive(v in proptest::collection::vec(-10.0..10.0f64, 1..12), k in -5.0..5.0f64, u in utility()) {
            let s = SampleSet::uniform(v).unwrap();
            let a = empirical_oce(&s, &u, None).unwrap().value;
            let b = empirical_oce(&s.shifted(k), &u, None).unwrap().value;
            prop_assert!((b - a - k).abs() < 1e-8);
        }

        #[test]
        fn monotone_and_below_mean(v in proptest::collection::vec(-10.0..10.0f64, 1..12),
                                   bump in proptest::collection::vec(0.0..3.0f64, 12),
                                   u in utility()) {
            let s = SampleSet::uniform(v.clone()).unwrap();
            let t = SampleSet::uniform(v.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
            let a = empirical_oce(&s, &u, None).unwrap().value;
            let b = empirical_oce(&t, &u, None).unwrap().value;
            prop_assert!(a <= b + 1e-9);
            prop_assert!(a <= s.mean() + 1e-9);
        }

        #[test]
        fn concave_in_sample(v in proptest::collection::vec(-10.0..10.0f64, 6),
                             w in proptest::collection::vec(-10.0..10.0f64, 6),
                             lambda in 0.0..1.0f64, u in utility()) {
            let mix: Vec<f64> = v.iter().zip(&w).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let o = |x: Vec<f64>| empirical_oce(&SampleSet::uniform(x).unwrap(), &u, None).unwrap().value;
            let lhs = o(mix);
            let rhs = lambda * o(v) + (1.0 - lambda) * o(w);
            prop_assert!(lhs >= rhs - 1e-8);
        }

        #[test]
        fn cvar_is_piecewise_linear_oce(v in proptest::collection::vec(-10.0..10.0f64, 1..15), gamma in 0.05..0.95f64) {
            let s = SampleSet::uniform(v).unwrap();
            let direct = empirical_cvar(&s, gamma).unwrap();
            let via_oce = empirical_oce(&s, &UtilitySpec::cvar(gamma).unwrap(), None).unwrap().value;
            prop_assert!((direct - via_oce).abs() < 1e-9);
        }

        #[test]
        fn mean_variance_matches_oce(v in proptest::collection::vec(-5.0..5.0f64, 1..10), extra in 0.0..5.0f64) {
            let s = SampleSet::uniform(v).unwrap();
            let tau = (s.max() - s.min()).max(1e-3) + extra;
            let mv = mean_variance_oce(&s, tau).unwrap();
            let oce = empirical_oce(&s, &UtilitySpec::TruncatedQuadratic { tau }, None).unwrap().value;
            prop_assert!((mv - oce).abs() < 1e-8);
        }
    }
}
