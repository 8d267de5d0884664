//! Evaluation criteria and cross-validation of the penalty weights.

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, FitSpec, FittedIDR};
use crate::model::{AllocParams, Dataset, DecisionRule, UtilitySpec};
use crate::oce::{empirical_quantile, SampleSet};
use crate::seed;

/// A criterion value, or the explicit marker that no sample matched the rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Estimate {
    Defined(f64),
    Undefined,
}

impl Estimate {
    pub fn value(self) -> Option<f64> {
        match self {
            Estimate::Defined(v) => Some(v),
            Estimate::Undefined => None,
        }
    }

    /// Ranking score: undefined counts as minus infinity.
    pub fn score(self) -> f64 {
        self.value().unwrap_or(f64::NEG_INFINITY)
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimate::Defined(v) => write!(f, "{v}"),
            Estimate::Undefined => write!(f, "undefined"),
        }
    }
}

fn matched(rule: &dyn DecisionRule, data: &Dataset) -> Vec<usize> {
    (0..data.n())
        .filter(|&i| rule.decide(data.row(i)) == data.action(i))
        .collect()
}

/// Inverse-propensity weighted mean outcome over samples whose action
/// agrees with the rule.
pub fn empirical_value(rule: &dyn DecisionRule, data: &Dataset) -> Estimate {
    let idx = matched(rule, data);
    if idx.is_empty() {
        return Estimate::Undefined;
    }
    let (num, den) = idx.iter().fold((0.0, 0.0), |(n, d), &i| {
        let w = 1.0 / data.propensity(i);
        (n + w * data.outcome(i), d + w)
    });
    Estimate::Defined(num / den)
}

/// Weighted mean of `alpha(X) + u(Z - alpha(X))` over matched samples.
pub fn empirical_cde(
    rule: &dyn DecisionRule,
    alloc: &AllocParams,
    u: &UtilitySpec,
    data: &Dataset,
) -> Estimate {
    let idx = matched(rule, data);
    if idx.is_empty() {
        return Estimate::Undefined;
    }
    let (num, den) = idx.iter().fold((0.0, 0.0), |(n, d), &i| {
        let w = 1.0 / data.propensity(i);
        let a = alloc.value(data.row(i));
        let v = match u {
            UtilitySpec::Identity => data.outcome(i),
            _ => a + u.eval(data.outcome(i) - a),
        };
        (n + w * v, d + w)
    });
    Estimate::Defined(num / den)
}

/// Fraction of rows of `data` where the two rules disagree.
pub fn misclassification(rule: &dyn DecisionRule, truth: &dyn DecisionRule, data: &Dataset) -> f64 {
    if data.n() == 0 {
        return 0.0;
    }
    let wrong = (0..data.n())
        .filter(|&i| rule.decide(data.row(i)) != truth.decide(data.row(i)))
        .count();
    wrong as f64 / data.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEntry {
    pub prob: f64,
    pub value: Estimate,
}

/// Lower empirical quantiles of the matched outcomes.
pub fn matched_quantiles(
    rule: &dyn DecisionRule,
    data: &Dataset,
    probs: &[f64],
) -> Result<Vec<QuantileEntry>> {
    if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "quantile level {p} not in (0,1)"
        )));
    }
    let idx = matched(rule, data);
    if idx.is_empty() {
        return Ok(probs
            .iter()
            .map(|&prob| QuantileEntry {
                prob,
                value: Estimate::Undefined,
            })
            .collect());
    }
    let s = SampleSet::uniform(idx.iter().map(|&i| data.outcome(i)).collect())?;
    probs
        .iter()
        .map(|&prob| {
            Ok(QuantileEntry {
                prob,
                value: Estimate::Defined(empirical_quantile(&s, prob)?),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub empirical_value: Estimate,
    pub empirical_cde: Estimate,
    pub misclassification: Option<f64>,
    pub quantiles: Vec<QuantileEntry>,
    pub n_matched: usize,
    pub n: usize,
}

pub fn evaluate(
    rule: &dyn DecisionRule,
    alloc: &AllocParams,
    u: &UtilitySpec,
    data: &Dataset,
    truth: Option<&dyn DecisionRule>,
    probs: &[f64],
) -> Result<EvalReport> {
    if data.n() == 0 {
        return Err(Error::EmptySample);
    }
    Ok(EvalReport {
        empirical_value: empirical_value(rule, data),
        empirical_cde: empirical_cde(rule, alloc, u, data),
        misclassification: truth.map(|t| misclassification(rule, t, data)),
        quantiles: matched_quantiles(rule, data, probs)?,
        n_matched: matched(rule, data).len(),
        n: data.n(),
    })
}

pub const DEFAULT_LAMBDAS: [f64; 5] = [0.0, 1e-3, 1e-2, 1e-1, 1.0];

/// The full product grid of [`DEFAULT_LAMBDAS`].
pub fn default_grid() -> Vec<(f64, f64)> {
    DEFAULT_LAMBDAS
        .iter()
        .flat_map(|&a| DEFAULT_LAMBDAS.iter().map(move |&r| (a, r)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub lambda_alloc: f64,
    pub lambda_rule: f64,
    pub fold: usize,
    pub ocde: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_alloc: f64,
    pub lambda_rule: f64,
    /// Mean held-out criterion per grid point, in grid order.
    pub scores: Vec<f64>,
    pub table: Vec<FoldRow>,
    pub fitted: FittedIDR,
}

/// Fold label per sample: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, seed::STREAM_FOLDS, 0)));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// `k`-fold cross-validation of `(lambda_alloc, lambda_rule)` by held-out
/// empirical CDE; the winner is refit on all of `data`.
pub fn cross_validate(
    data: &Dataset,
    template: &FitSpec,
    grid: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if k < 2 || k > data.n() {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= k <= n, got k = {k}, n = {}",
            data.n()
        )));
    }
    let folds = fold_assignment(data.n(), k, seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..k).map(move |f| (g, f)))
        .collect();
    let rows: Vec<Result<FoldRow>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (la, lr) = grid[g];
            let train: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == f).collect();
            let spec = FitSpec {
                lambda_alloc: la,
                lambda_rule: lr,
                certify: false,
                ..template.clone()
            };
            let fitted = fit(&data.subset(&train), &spec)?;
            let ocde = empirical_cde(
                &fitted.rule,
                &fitted.alloc,
                &template.utility,
                &data.subset(&test),
            );
            Ok(FoldRow {
                lambda_alloc: la,
                lambda_rule: lr,
                fold: f,
                ocde,
            })
        })
        .collect();
    let table: Vec<FoldRow> = rows.into_iter().collect::<Result<_>>()?;
    let scores: Vec<f64> = (0..grid.len())
        .map(|g| {
            let r = &table[g * k..(g + 1) * k];
            if r.iter().any(|row| row.ocde.value().is_none()) {
                f64::NEG_INFINITY
            } else {
                r.iter().map(|row| row.ocde.score()).sum::<f64>() / k as f64
            }
        })
        .collect();
    let mut best = 0;
    for g in 1..grid.len() {
        let better = scores[g] > scores[best]
            || (scores[g] == scores[best]
                && grid[g].partial_cmp(&grid[best]) == Some(std::cmp::Ordering::Less));
        if better {
            best = g;
        }
    }
    let (la, lr) = grid[best];
    let fitted = fit(
        data,
        &FitSpec {
            lambda_alloc: la,
            lambda_rule: lr,
            ..template.clone()
        },
    )?;
    Ok(CvResult {
        lambda_alloc: la,
        lambda_rule: lr,
        scores,
        table,
        fitted,
    })
}

/// Fold table as CSV with header `lambda_alloc,lambda_rule,fold,ocde`.
pub fn fold_table_csv(rows: &[FoldRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda_alloc", "lambda_rule", "fold", "ocde"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.lambda_alloc.to_string(),
            r.lambda_rule.to_string(),
            r.fold.to_string(),
            r.ocde.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, LinearRule};

    fn data(a: &[f64], z: &[f64], pi: &[f64]) -> Dataset {
        let n = a.len();
        Dataset::new(
            1,
            (0..n).map(|i| i as f64).collect(),
            a.to_vec(),
            z.to_vec(),
            pi.to_vec(),
        )
        .unwrap()
    }

    fn plus() -> LinearRule {
        LinearRule::constant(1, Action::Plus)
    }

    #[test]
    fn value_examples() {
        let d = data(&[1.0, -1.0], &[3.0, 7.0], &[0.5, 0.5]);
        assert_eq!(empirical_value(&plus(), &d), Estimate::Defined(3.0));
        let d = data(&[1.0, 1.0], &[2.0, 4.0], &[0.5, 0.25]);
        let v = empirical_value(&plus(), &d).value().unwrap();
        assert!((v - 10.0 / 3.0).abs() < 1e-14);
        let d = data(&[-1.0], &[1.0], &[0.5]);
        assert_eq!(empirical_value(&plus(), &d), Estimate::Undefined);
    }

    #[test]
    fn cde_examples() {
        let d = data(&[1.0], &[1.0], &[0.5]);
        let u = UtilitySpec::PiecewiseLinear { xi1: 0.0, xi2: 2.0 };
        let alloc = AllocParams {
            b: vec![0.0],
            b0: 1.0,
        };
        assert_eq!(
            empirical_cde(&plus(), &alloc, &u, &d),
            Estimate::Defined(1.0)
        );
    }

    #[test]
    fn quantile_examples() {
        let d = data(&[1.0; 4], &[3.0, 1.0, 4.0, 2.0], &[0.5; 4]);
        let q = matched_quantiles(&plus(), &d, &[0.5, 0.25]).unwrap();
        assert_eq!(q[0].value, Estimate::Defined(2.0));
        assert_eq!(q[1].value, Estimate::Defined(1.0));
        assert!(matched_quantiles(&plus(), &d, &[1.0]).is_err());
    }

    #[test]
    fn misclassification_examples() {
        let d = data(&[1.0, 1.0, 1.0, 1.0], &[0.0; 4], &[0.5; 4]);
        let truth = LinearRule {
            slope: vec![1.0],
            intercept: -1.5,
        };
        let neg = LinearRule {
            slope: vec![-1.0],
            intercept: 1.5,
        };
        assert_eq!(misclassification(&truth, &truth, &d), 0.0);
        assert_eq!(misclassification(&neg, &truth, &d), 1.0);
        assert_eq!(misclassification(&plus(), &truth, &d), 0.5);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let f = fold_assignment(23, 5, 9);
        assert_eq!(f, fold_assignment(23, 5, 9));
        for k in 0..5 {
            let c = f.iter().filter(|&&v| v == k).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn fold_csv_header() {
        let rows = [FoldRow {
            lambda_alloc: 0.0,
            lambda_rule: 0.1,
            fold: 2,
            ocde: Estimate::Undefined,
        }];
        assert_eq!(
            fold_table_csv(&rows).unwrap(),
            "lambda_alloc,lambda_rule,fold,ocde\n0,0.1,2,undefined\n"
        );
    }
}
