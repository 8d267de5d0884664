//! Synthetic scenarios, baseline rules and the replication harness.

use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, default_grid, fold_assignment, Estimate, DEFAULT_LAMBDAS};
use crate::fit::{fit, verify_runs, DcCheck, FitSpec};
use crate::lasso::fit_penalized_ls;
use crate::model::{Action, Dataset, DecisionRule, LinearRule};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

/// Draws `n` samples of scenario `id`: `X ~ U[-1,1]^p`, `A = +-1` with
/// probability 1/2 and `Z = 1 + X1 + X2 + (0.5 + X1 - X2 + X3) A + eps`.
pub fn simulate(spec: &ScenarioSpec) -> Result<Dataset> {
    if spec.p < 3 {
        return Err(Error::InvalidParameter("p ≥ 3 required".into()));
    }
    if !(1..=3).contains(&spec.id) {
        return Err(Error::InvalidParameter(format!(
            "unknown scenario {}",
            spec.id
        )));
    }
    let (n, p) = (spec.n, spec.p);
    let mut rng = seed::rng(spec.seed);
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let std_normal = Normal::<f64>::new(0.0, 1.0).expect("valid sd");
    let mut x = Vec::with_capacity(n * p);
    let mut a = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| unif.sample(&mut rng)).collect();
        let act = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let base = 1.0 + row[0] + row[1];
        let eps = match spec.id {
            1 => (2.0 * std_normal.sample(&mut rng)).exp(),
            2 => {
                let u: f64 = 1.0 - rng.random::<f64>();
                0.5 * (-u.ln()).powf(1.0 / 0.3)
            }
            _ => (2.0 * base.abs() * std_normal.sample(&mut rng)).exp(),
        };
        z.push(base + (0.5 + row[0] - row[1] + row[2]) * act + eps);
        a.push(act);
        x.extend(row);
    }
    Dataset::new(p, x, a, z, vec![0.5; n])
}

/// `sign(0.5 + x1 - x2 + x3)`.
pub fn true_rule(p: usize) -> Result<LinearRule> {
    if p < 3 {
        return Err(Error::InvalidParameter("p ≥ 3 required".into()));
    }
    let mut slope = vec![0.0; p];
    slope[..3].copy_from_slice(&[1.0, -1.0, 1.0]);
    Ok(LinearRule {
        slope,
        intercept: 0.5,
    })
}

/// Weighted lasso of `response * A` on `(X, 1)` with weights `1/pi`;
/// returns `(slope, intercept)`.
pub fn dlearn_coefficients(
    data: &Dataset,
    response: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, f64)> {
    let (n, p) = (data.n(), data.p());
    if response.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: response.len(),
        });
    }
    let mut design = Vec::with_capacity(n * (p + 1));
    for i in 0..n {
        design.extend_from_slice(data.row(i));
        design.push(1.0);
    }
    let y: Vec<f64> = (0..n)
        .map(|i| response[i] * data.action(i).sign())
        .collect();
    let w: Vec<f64> = data.propensities().iter().map(|v| 1.0 / v).collect();
    let mut mask = vec![true; p + 1];
    mask[p] = false;
    let f = fit_penalized_ls(&design, p + 1, &y, &w, lambda, &mask)?;
    Ok((f.coef[..p].to_vec(), f.coef[p]))
}

pub fn fit_dlearn(data: &Dataset, lambda: f64) -> Result<LinearRule> {
    let (slope, intercept) = dlearn_coefficients(data, data.outcomes(), lambda)?;
    Ok(LinearRule { slope, intercept })
}

/// Design `(1, X, A, X * A)`.
fn pls_design(data: &Dataset) -> Vec<f64> {
    let (n, p) = (data.n(), data.p());
    let mut d = Vec::with_capacity(n * (2 * p + 2));
    for i in 0..n {
        let a = data.action(i).sign();
        d.push(1.0);
        d.extend_from_slice(data.row(i));
        d.push(a);
        d.extend(data.row(i).iter().map(|x| x * a));
    }
    d
}

fn pls_coefficients(data: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    let p = data.p();
    let k = 2 * p + 2;
    let mut mask = vec![true; k];
    mask[0] = false;
    mask[p + 1] = false;
    Ok(fit_penalized_ls(
        &pls_design(data),
        k,
        data.outcomes(),
        &vec![1.0; data.n()],
        lambda,
        &mask,
    )?
    .coef)
}

/// Least squares with main effects and action interactions; the rule picks
/// the action with the larger fitted outcome.
pub fn fit_l1pls(data: &Dataset, lambda: f64) -> Result<LinearRule> {
    let p = data.p();
    let c = pls_coefficients(data, lambda)?;
    Ok(LinearRule {
        slope: c[p + 2..].to_vec(),
        intercept: c[p + 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IdrCde,
    DLearn,
    L1Pls,
    Truth,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::IdrCde => "idr_cde",
            Method::DLearn => "dlearn",
            Method::L1Pls => "l1_pls",
            Method::Truth => "truth",
            Method::Random => "random",
        }
    }
}

/// A fixed pseudo-random function of the covariates.
#[derive(Debug, Clone, Copy)]
pub struct RandomRule {
    pub seed: u64,
}

impl DecisionRule for RandomRule {
    fn decide(&self, x: &[f64]) -> Action {
        let mut h = self.seed;
        for v in x {
            h = seed::derive(h, v.to_bits(), 0);
        }
        if h & 1 == 0 {
            Action::Plus
        } else {
            Action::Minus
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Tuning {
    Fixed { lambda_alloc: f64, lambda_rule: f64 },
    Cv { grid: Vec<(f64, f64)>, folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineTuning {
    Fixed { lambda: f64 },
    Cv { grid: Vec<f64>, folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenarios: Vec<u8>,
    pub sizes: Vec<usize>,
    pub p: usize,
    pub reps: usize,
    pub test_size: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub fit: FitSpec,
    pub idr_tuning: Tuning,
    pub baseline_tuning: BaselineTuning,
    pub probs: Vec<f64>,
    /// Record wall-clock times (makes the report non-reproducible).
    pub timing: bool,
    /// Re-verify descent and feasibility of every DC run.
    pub verify: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenarios: vec![1],
            sizes: vec![100],
            p: 10,
            reps: 20,
            test_size: 10_000,
            methods: vec![Method::IdrCde, Method::DLearn, Method::L1Pls],
            seed: 20_240_101,
            fit: FitSpec::default(),
            idr_tuning: Tuning::Cv {
                grid: default_grid(),
                folds: 10,
            },
            baseline_tuning: BaselineTuning::Cv {
                grid: DEFAULT_LAMBDAS.to_vec(),
                folds: 10,
            },
            probs: vec![0.5, 0.25],
            timing: false,
            verify: false,
        }
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub scenario: u8,
    pub n: usize,
    pub rep: usize,
    pub method: Method,
    pub misclassification: f64,
    pub value: Estimate,
    pub quantiles: Vec<eval::QuantileEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dc_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dc_check: Option<DcCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub scenario: u8,
    pub n: usize,
    pub rep: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: u8,
    pub n: usize,
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub summary: Vec<SummaryRow>,
    pub records: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
    pub notes: Vec<String>,
}

impl BenchmarkReport {
    pub fn row(&self, scenario: u8, n: usize, method: Method, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| {
            r.scenario == scenario && r.n == n && r.method == method && r.metric == metric
        })
    }

    /// One row per `(scenario, n, method, metric)`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(["scenario", "n", "method", "metric", "mean", "se", "count"])
            .map_err(io)?;
        for r in &self.summary {
            w.write_record([
                r.scenario.to_string(),
                r.n.to_string(),
                r.method.name().to_string(),
                r.metric.clone(),
                r.mean.to_string(),
                r.se.to_string(),
                r.count.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error `sd / sqrt(R)`.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    if r == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().cloned()) / r as f64;
    if r == 1 {
        return (mean, f64::NAN);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (r - 1) as f64;
    (mean, (var / r as f64).sqrt())
}

/// Cross-validated lambda for a baseline by held-out squared prediction error.
fn tune_baseline(
    data: &Dataset,
    method: Method,
    tuning: &BaselineTuning,
    seed: u64,
) -> Result<f64> {
    let (grid, k) = match tuning {
        BaselineTuning::Fixed { lambda } => return Ok(*lambda),
        BaselineTuning::Cv { grid, folds } => (grid, (*folds).min(data.n())),
    };
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty baseline grid".into()));
    }
    let folds = fold_assignment(data.n(), k, seed);
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &lam in grid {
        let mut err = 0.0;
        for f in 0..k {
            let train = data.subset(&(0..data.n()).filter(|&i| folds[i] != f).collect::<Vec<_>>());
            let test_idx: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == f).collect();
            match method {
                Method::DLearn => {
                    let (s, c) = dlearn_coefficients(&train, train.outcomes(), lam)?;
                    for &i in &test_idx {
                        let pred = crate::model::dot(&s, data.row(i)) + c;
                        let y = data.outcome(i) * data.action(i).sign();
                        err += (y - pred).powi(2) / data.propensity(i);
                    }
                }
                _ => {
                    let c = pls_coefficients(&train, lam)?;
                    let p = data.p();
                    for &i in &test_idx {
                        let x = data.row(i);
                        let a = data.action(i).sign();
                        let pred = c[0]
                            + crate::model::dot(&c[1..p + 1], x)
                            + a * (c[p + 1] + crate::model::dot(&c[p + 2..], x));
                        err += (data.outcome(i) - pred).powi(2);
                    }
                }
            }
        }
        if err < best.0 || (err == best.0 && lam < best.1) {
            best = (err, lam);
        }
    }
    Ok(best.1)
}

fn run_method(
    cfg: &BenchConfig,
    method: Method,
    train: &Dataset,
    test: &Dataset,
    ids: (u8, usize, usize),
    rep_seed: u64,
) -> Result<RepRecord> {
    let truth = true_rule(cfg.p)?;
    let start = Instant::now();
    let mut rec = RepRecord {
        scenario: ids.0,
        n: ids.1,
        rep: ids.2,
        method,
        misclassification: 0.0,
        value: Estimate::Undefined,
        quantiles: Vec::new(),
        dc_iterations: None,
        lambda: None,
        seconds: None,
        dc_check: None,
    };
    let rule: Box<dyn DecisionRule + Send + Sync> = match method {
        Method::IdrCde => {
            let fitted = match &cfg.idr_tuning {
                Tuning::Fixed {
                    lambda_alloc,
                    lambda_rule,
                } => {
                    let spec = FitSpec {
                        lambda_alloc: *lambda_alloc,
                        lambda_rule: *lambda_rule,
                        ..cfg.fit.clone()
                    };
                    rec.lambda = Some((*lambda_alloc, *lambda_rule));
                    fit(train, &spec)?
                }
                Tuning::Cv { grid, folds } => {
                    let cv = eval::cross_validate(
                        train,
                        &cfg.fit,
                        grid,
                        (*folds).min(train.n()),
                        rep_seed,
                    )?;
                    rec.lambda = Some((cv.lambda_alloc, cv.lambda_rule));
                    cv.fitted
                }
            };
            rec.dc_iterations = Some(fitted.iterations());
            if cfg.verify {
                let spec = FitSpec {
                    lambda_alloc: rec.lambda.map(|l| l.0).unwrap_or(0.0),
                    lambda_rule: rec.lambda.map(|l| l.1).unwrap_or(0.0),
                    ..cfg.fit.clone()
                };
                rec.dc_check = Some(verify_runs(train, &spec, &fitted)?);
            }
            Box::new(fitted.rule)
        }
        Method::DLearn | Method::L1Pls => {
            let lam = tune_baseline(train, method, &cfg.baseline_tuning, rep_seed)?;
            rec.lambda = Some((lam, lam));
            Box::new(if method == Method::DLearn {
                fit_dlearn(train, lam)?
            } else {
                fit_l1pls(train, lam)?
            })
        }
        Method::Truth => Box::new(truth.clone()),
        Method::Random => Box::new(RandomRule {
            seed: seed::derive(rep_seed, seed::STREAM_METHOD, 0),
        }),
    };
    if cfg.timing {
        rec.seconds = Some(start.elapsed().as_secs_f64());
    }
    rec.misclassification = eval::misclassification(rule.as_ref(), &truth, test);
    rec.value = eval::empirical_value(rule.as_ref(), test);
    rec.quantiles = eval::matched_quantiles(rule.as_ref(), test, &cfg.probs)?;
    Ok(rec)
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    if cfg.reps == 0 || cfg.test_size == 0 || cfg.methods.is_empty() {
        return Err(Error::InvalidParameter(
            "reps, test_size and methods must be nonempty".into(),
        ));
    }
    true_rule(cfg.p)?;
    let mut jobs = Vec::new();
    for &s in &cfg.scenarios {
        for &n in &cfg.sizes {
            for rep in 0..cfg.reps {
                jobs.push((s, n, rep));
            }
        }
    }
    let results: Vec<Result<(Vec<RepRecord>, Vec<RepFailure>)>> = jobs
        .par_iter()
        .map(|&(s, n, rep)| {
            let combo = seed::derive(cfg.seed, s as u64, n as u64);
            let train = simulate(&ScenarioSpec {
                id: s,
                n,
                p: cfg.p,
                seed: seed::derive(combo, seed::STREAM_TRAIN, rep as u64),
            })?;
            let test = simulate(&ScenarioSpec {
                id: s,
                n: cfg.test_size,
                p: cfg.p,
                seed: seed::derive(combo, seed::STREAM_TEST, rep as u64),
            })?;
            let rep_seed = seed::derive(combo, seed::STREAM_FOLDS, rep as u64);
            let mut recs = Vec::new();
            let mut fails = Vec::new();
            for &m in &cfg.methods {
                match run_method(cfg, m, &train, &test, (s, n, rep), rep_seed) {
                    Ok(r) => recs.push(r),
                    Err(e) => {
                        warn!("scenario {s}, n {n}, rep {rep}, {}: {e}", m.name());
                        fails.push(RepFailure {
                            scenario: s,
                            n,
                            rep,
                            method: m,
                            error: e.to_string(),
                        });
                    }
                }
            }
            info!("scenario {s}, n {n}, rep {rep} done");
            Ok((recs, fails))
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        let (a, b) = r?;
        records.extend(a);
        failures.extend(b);
    }
    let mut summary = Vec::new();
    for &s in &cfg.scenarios {
        for &n in &cfg.sizes {
            for &m in &cfg.methods {
                let recs: Vec<&RepRecord> = records
                    .iter()
                    .filter(|r| r.scenario == s && r.n == n && r.method == m)
                    .collect();
                let mut push = |metric: String, vals: Vec<f64>| {
                    let (mean, se) = mean_se(&vals);
                    summary.push(SummaryRow {
                        scenario: s,
                        n,
                        method: m,
                        metric,
                        mean,
                        se,
                        count: vals.len(),
                    });
                };
                push(
                    "misclassification".into(),
                    recs.iter().map(|r| r.misclassification).collect(),
                );
                push(
                    "value".into(),
                    recs.iter().filter_map(|r| r.value.value()).collect(),
                );
                for (qi, &prob) in cfg.probs.iter().enumerate() {
                    let vals = recs
                        .iter()
                        .filter_map(|r| r.quantiles.get(qi).and_then(|q| q.value.value()))
                        .collect();
                    push(format!("quantile_{prob}"), vals);
                }
                if m == Method::IdrCde {
                    push(
                        "dc_iterations".into(),
                        recs.iter()
                            .filter_map(|r| r.dc_iterations.map(|v| v as f64))
                            .collect(),
                    );
                    if cfg.timing {
                        push(
                            "seconds".into(),
                            recs.iter().filter_map(|r| r.seconds).collect(),
                        );
                    }
                }
            }
        }
    }
    let notes = vec!["residual weighted learning is not included".to_string()];
    Ok(BenchmarkReport {
        summary,
        records,
        failures,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_is_deterministic_and_bounded() {
        let s = ScenarioSpec {
            id: 2,
            n: 200,
            p: 4,
            seed: 5,
        };
        let a = simulate(&s).unwrap();
        assert_eq!(a, simulate(&s).unwrap());
        assert!(a.covariates().iter().all(|v| v.abs() <= 1.0));
        assert!(simulate(&ScenarioSpec { p: 2, ..s }).is_err());
    }

    #[test]
    fn true_rule_examples() {
        let t = true_rule(4).unwrap();
        assert_eq!(t.decide(&[0.0; 4]), Action::Plus);
        assert_eq!(t.decide(&[-1.0, 1.0, -1.0, 0.0]), Action::Minus);
        assert_eq!(t.decide(&[0.25, 0.5, -0.25, 0.0]), Action::Plus);
    }

    #[test]
    fn mean_se_small() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
