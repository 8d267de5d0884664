#![allow(dead_code)]

use idrcde::fit::FitSpec;
use idrcde::model::{AllocParams, Dataset, RuleParams};
use idrcde::qp::{ConvexQP, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense strictly convex QP `min 1/2 x'Qx + q'x  s.t.  Gx <= h`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub q_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl DenseQp {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Self {
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q_mat = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let g = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let slack = DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
        let h = &g * x0 + slack;
        DenseQp { q_mat, q, g, h }
    }

    pub fn to_convex_qp(&self) -> ConvexQP {
        let n = self.q.len();
        let m = self.h.len();
        let mut qt = Vec::new();
        for i in 0..n {
            for j in 0..n {
                qt.push((i, j, self.q_mat[(i, j)]));
            }
        }
        let mut gt = Vec::new();
        for r in 0..m {
            for j in 0..n {
                gt.push((r, j, self.g[(r, j)]));
            }
        }
        ConvexQP::new(
            SparseMatrix::from_triplets(n, n, &qt),
            self.q.iter().cloned().collect(),
        )
        .with_inequalities(
            SparseMatrix::from_triplets(m, n, &gt),
            self.h.iter().cloned().collect(),
        )
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q.dot(x)
    }
}

/// Solves by enumerating every active set and keeping the KKT point.
pub fn active_set_oracle(qp: &DenseQp) -> DVector<f64> {
    let n = qp.q.len();
    let m = qp.h.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|r| mask & (1 << r) != 0).collect();
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.q_mat);
        for i in 0..n {
            rhs[i] = -qp.q[i];
        }
        for (a, &r) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + a, j)] = qp.g[(r, j)];
                kkt[(j, n + a)] = qp.g[(r, j)];
            }
            rhs[n + a] = qp.h[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k).into_owned();
        let feasible = (0..m).all(|r| (qp.g.row(r) * &x)[0] <= qp.h[r] + 1e-9);
        if feasible && lam.iter().all(|&l| l >= -1e-9) {
            let f = qp.objective(&x);
            if best.as_ref().is_none_or(|b| f < b.0) {
                best = Some((f, x));
            }
        }
    }
    best.expect("feasible strictly convex QP has a KKT point").1
}

/// Objective with indicator functions, written from its definition.
pub fn direct_objective(
    data: &Dataset,
    spec: &FitSpec,
    rule: &RuleParams,
    alloc: &AllocParams,
) -> f64 {
    let (xi1, xi2) = match spec.utility {
        idrcde::UtilitySpec::PiecewiseLinear { xi1, xi2 } => (xi1, xi2),
        _ => unreachable!(),
    };
    let n = data.n() as f64;
    let p = data.p();
    let pen = |x: f64, w: f64| match spec.surrogate {
        idrcde::fit::Surrogate::PlainL1 => w * x.abs(),
        idrcde::fit::Surrogate::McpLike { a } => {
            if x.abs() <= a * w {
                w * x.abs() - x * x / (2.0 * a)
            } else {
                a * w * w / 2.0
            }
        }
    };
    let mut h = 0.0;
    for k in 0..p {
        h += pen(alloc.b[k], spec.lambda_alloc) + pen(rule.beta[k], spec.lambda_rule);
    }
    let n_plus = data.outcomes().iter().filter(|z| **z > 0.0).count() as f64;
    for i in 0..data.n() {
        let x = data.row(i);
        let z = data.outcome(i);
        let pi = data.propensity(i);
        let s = data.action(i).sign()
            * (x.iter().zip(&rule.beta).map(|(a, b)| a * b).sum::<f64>() + rule.bias.sign());
        let t = z - x.iter().zip(&alloc.b).map(|(a, b)| a * b).sum::<f64>() - alloc.b0;
        let a = (1.0 - xi1) * t.max(0.0) + (xi2 - 1.0) * (-t).max(0.0);
        if s > 0.0 {
            h += ((-z).max(0.0) + a) / (n * pi);
        }
        if z > 0.0 && s >= 0.0 {
            h -= z / (n_plus * pi);
        }
    }
    h
}

/// Lower-tail average: `(1/gamma) * integral_0^gamma q(u) du` for equal weights.
pub fn sorted_tail_cvar(values: &[f64], gamma: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut mass = gamma;
    let mut acc = 0.0;
    for x in v {
        let take = mass.min(1.0 / n);
        acc += take * x;
        mass -= take;
        if mass <= 0.0 {
            break;
        }
    }
    acc / gamma
}

/// `max over sample points eta of eta + mean u(Z - eta)` with `u` piecewise linear.
pub fn grid_sup_oce(values: &[f64], xi1: f64, xi2: f64) -> f64 {
    let n = values.len() as f64;
    values
        .iter()
        .map(|&eta| {
            eta + values
                .iter()
                .map(|z| xi1 * (z - eta).max(0.0) - xi2 * (eta - z).max(0.0))
                .sum::<f64>()
                / n
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
