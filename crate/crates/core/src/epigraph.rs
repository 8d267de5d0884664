//! Piecewise-affine encodings of the indicator epigraph and hypograph.
//!
//! For a scalar pair `(t, s)`:
//!
//! * `t >= 1(s > 0)`  iff  `max(-t, s) - max(t + s - 1, 0) <= 0`
//! * `t <= 1(s >= 0)` iff  `max(t + s - 1, 0) - max(-t, s) <= 0`
//!
//! Both are difference-of-max constraints. [`expand_to_reverse_convex`] turns
//! `max_j p_j(x) - max_k m_k(x) <= 0` into the conjunction over `j` of
//! `max_k (m_k - p_j)(x) >= 0`, which is the form the DC solver consumes.

use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::error::{Error, Result};

/// Feasibility tolerance used when reading signed violations as booleans.
pub const FEAS_TOL: f64 = 1e-8;

/// `max_j terms_j(x) >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxAffineConstraint {
    terms: Vec<AffineForm>,
}

impl MaxAffineConstraint {
    pub fn new(terms: Vec<AffineForm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter(
                "max-affine constraint with no terms".into(),
            ));
        }
        if terms.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite max-affine coefficient".into(),
            ));
        }
        Ok(MaxAffineConstraint { terms })
    }

    pub fn terms(&self) -> &[AffineForm] {
        &self.terms
    }

    pub fn term_values(&self, x: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(x)).collect()
    }

    /// `max_j terms_j(x)`; the constraint holds when this is nonnegative.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.eval(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `max(plus) - max(minus) <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcConstraint {
    pub plus: Vec<AffineForm>,
    pub minus: Vec<AffineForm>,
}

impl DcConstraint {
    pub fn new(plus: Vec<AffineForm>, minus: Vec<AffineForm>) -> Result<Self> {
        if plus.is_empty() || minus.is_empty() {
            return Err(Error::InvalidParameter(
                "difference-of-max constraint needs both sides".into(),
            ));
        }
        Ok(DcConstraint { plus, minus })
    }

    /// Signed violation; `<= 0` means satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mx = |v: &[AffineForm]| {
            v.iter()
                .map(|t| t.eval(x))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        mx(&self.plus) - mx(&self.minus)
    }

    /// Epigraph of `1(s > 0)` in the variables `(t, s)` given as affine forms.
    pub fn epigraph(t: &AffineForm, s: &AffineForm) -> Self {
        let one = AffineForm::constant(1.0);
        DcConstraint {
            plus: vec![t.scale(-1.0), s.clone()],
            minus: vec![t.add(s).sub(&one), AffineForm::constant(0.0)],
        }
    }

    /// Hypograph of `1(s >= 0)` in the variables `(t, s)` given as affine forms.
    pub fn hypograph(t: &AffineForm, s: &AffineForm) -> Self {
        let one = AffineForm::constant(1.0);
        DcConstraint {
            plus: vec![t.add(s).sub(&one), AffineForm::constant(0.0)],
            minus: vec![t.scale(-1.0), s.clone()],
        }
    }
}

/// `max(-t, s) - max(t + s - 1, 0)`; nonpositive iff `t >= 1(s > 0)`.
pub fn epi_violation(t: f64, s: f64) -> f64 {
    (-t).max(s) - ((t - 1.0) + s).max(0.0)
}

/// `max(t + s - 1, 0) - max(-t, s)`; nonpositive iff `t <= 1(s >= 0)`.
pub fn hypo_violation(t: f64, s: f64) -> f64 {
    ((t - 1.0) + s).max(0.0) - (-t).max(s)
}

/// One reverse-convex constraint per plus-term, with terms `minus_k - plus_j`.
pub fn expand_to_reverse_convex(c: &DcConstraint) -> Vec<MaxAffineConstraint> {
    c.plus
        .iter()
        .map(|p| MaxAffineConstraint {
            terms: c.minus.iter().map(|m| m.sub(p)).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ind_gt(s: f64) -> f64 {
        if s > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn ind_ge(s: f64) -> f64 {
        if s >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    #[test]
    fn violation_examples() {
        assert_eq!(epi_violation(1.0, 0.5), 0.0);
        assert_eq!(epi_violation(0.0, -1.0), 0.0);
        assert_eq!(epi_violation(0.0, 0.5), 0.5);
        assert!(0.0 < ind_gt(0.5));
        assert_eq!(hypo_violation(1.0, 0.0), 0.0);
        assert_eq!(hypo_violation(1.0, -0.5), 0.5);
        assert!(1.0 > ind_ge(-0.5));
        assert_eq!(hypo_violation(-3.0, -1.0), -3.0);
    }

    #[test]
    fn grid_membership_matches_indicators() {
        let mut mismatches = 0;
        for i in 0..=40 {
            for j in 0..=40 {
                let t = -2.0 + 0.1 * i as f64;
                let s = -2.0 + 0.1 * j as f64;
                // snap the grid so that s = 0 is hit exactly
                let (t, s) = ((t * 10.0f64).round() / 10.0, (s * 10.0f64).round() / 10.0);
                if (epi_violation(t, s) <= 0.0) != (t >= ind_gt(s)) {
                    mismatches += 1;
                }
                if (hypo_violation(t, s) <= 0.0) != (t <= ind_ge(s)) {
                    mismatches += 1;
                }
            }
        }
        assert_eq!(mismatches, 0);
    }

    fn vars() -> (AffineForm, AffineForm) {
        (AffineForm::var(0, 1.0), AffineForm::var(1, 1.0))
    }

    #[test]
    fn epigraph_expansion_shape() {
        let (t, s) = vars();
        let e = expand_to_reverse_convex(&DcConstraint::epigraph(&t, &s));
        assert_eq!(e.len(), 2);
        // max(2t + s - 1, t) and max(t - 1, -s)
        for (x, want) in [
            ([1.0, 0.0], [1.0, 0.0]),
            ([0.3, -2.0], [0.3f64.max(-2.0 + 0.6 - 1.0), 2.0]),
        ] {
            assert!((e[0].value(&x) - want[0]).abs() < 1e-12);
            assert!((e[1].value(&x) - want[1].max(x[0] - 1.0)).abs() < 1e-12);
        }
        assert_eq!(
            e[0].term_values(&[1.0, 0.0]),
            vec![2.0 * 1.0 + 0.0 - 1.0, 1.0]
        );
        assert_eq!(e[1].term_values(&[1.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn expansion_grid_equivalence() {
        let (t, s) = vars();
        for dc in [
            DcConstraint::epigraph(&t, &s),
            DcConstraint::hypograph(&t, &s),
        ] {
            let ex = expand_to_reverse_convex(&dc);
            for i in 0..=40 {
                for j in 0..=40 {
                    let x = [-2.0 + 0.1 * i as f64, -2.0 + 0.1 * j as f64];
                    let orig = dc.violation(&x) <= 0.0;
                    let expanded = ex.iter().all(|c| c.value(&x) >= 0.0);
                    assert_eq!(orig, expanded, "at {x:?}");
                }
            }
        }
    }

    #[test]
    fn hypograph_expansion_terms() {
        let (t, s) = vars();
        let e = expand_to_reverse_convex(&DcConstraint::hypograph(&t, &s));
        let x = [0.25, -0.5];
        assert_eq!(e[0].term_values(&x), vec![1.0 - 0.5 + 0.5, 1.0 - 0.25]);
        assert_eq!(e[1].term_values(&x), vec![-0.25, -0.5]);
    }

    #[test]
    fn single_plus_term() {
        let a1 = AffineForm::new(vec![(0, 1.0)], 0.5);
        let b1 = AffineForm::new(vec![(0, 2.0)], 0.0);
        let b2 = AffineForm::new(vec![(1, -1.0)], 1.0);
        let dc = DcConstraint::new(vec![a1.clone()], vec![b1.clone(), b2.clone()]).unwrap();
        let e = expand_to_reverse_convex(&dc);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].terms(), &[b1.sub(&a1), b2.sub(&a1)]);
    }

    #[test]
    fn rejects_empty() {
        assert!(MaxAffineConstraint::new(vec![]).is_err());
        assert!(DcConstraint::new(vec![], vec![AffineForm::constant(0.0)]).is_err());
    }
}
