//! Sparse affine forms `c^T x + offset`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineForm {
    pub terms: Vec<(usize, f64)>,
    pub offset: f64,
}

impl AffineForm {
    pub fn new(mut terms: Vec<(usize, f64)>, offset: f64) -> Self {
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => merged.push((i, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        AffineForm {
            terms: merged,
            offset,
        }
    }

    pub fn constant(offset: f64) -> Self {
        AffineForm {
            terms: Vec::new(),
            offset,
        }
    }

    /// `coef * x[index]`.
    pub fn var(index: usize, coef: f64) -> Self {
        AffineForm::new(vec![(index, coef)], 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        // offset first: `(-1 + t) + s` is exact on decimal grids where `t + s - 1` is not
        self.terms
            .iter()
            .fold(self.offset, |acc, &(i, c)| acc + c * x[i])
    }

    pub fn add(&self, other: &AffineForm) -> AffineForm {
        let mut t = self.terms.clone();
        t.extend_from_slice(&other.terms);
        AffineForm::new(t, self.offset + other.offset)
    }

    pub fn scale(&self, k: f64) -> AffineForm {
        AffineForm::new(
            self.terms.iter().map(|&(i, c)| (i, c * k)).collect(),
            self.offset * k,
        )
    }

    pub fn sub(&self, other: &AffineForm) -> AffineForm {
        self.add(&other.scale(-1.0))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }

    pub fn is_finite(&self) -> bool {
        self.offset.is_finite() && self.terms.iter().all(|t| t.1.is_finite())
    }

    /// Coefficient vector of length `n`.
    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &(i, c) in &self.terms {
            v[i] += c;
        }
        v
    }
}
