//! Mehrotra predictor-corrector interior-point method.

use super::ldl::LdlFactor;
use super::{
    dot, inf_norm, ConvexQP, KktResiduals, QpDuals, QpError, QpSettings, QpSolution, QpStatus,
    SparseMatrix,
};

/// Where a merged inequality row came from.
#[derive(Debug, Clone, Copy)]
enum RowKind {
    General(usize),
    Lower(usize),
    Upper(usize),
}

/// The QP with bounds folded into `G x <= h`.
struct Prepared<'a> {
    qp: &'a ConvexQP,
    rows: Vec<Vec<(usize, f64)>>,
    h: Vec<f64>,
    kinds: Vec<RowKind>,
}

impl<'a> Prepared<'a> {
    fn new(qp: &'a ConvexQP) -> Self {
        let mut rows = Vec::new();
        let mut h = Vec::new();
        let mut kinds = Vec::new();
        for r in 0..qp.ineq_mat.nrows() {
            rows.push(qp.ineq_mat.row(r).collect());
            h.push(qp.ineq_rhs[r]);
            kinds.push(RowKind::General(r));
        }
        for i in 0..qp.n {
            if qp.lower[i].is_finite() {
                rows.push(vec![(i, -1.0)]);
                h.push(-qp.lower[i]);
                kinds.push(RowKind::Lower(i));
            }
            if qp.upper[i].is_finite() {
                rows.push(vec![(i, 1.0)]);
                h.push(qp.upper[i]);
                kinds.push(RowKind::Upper(i));
            }
        }
        Prepared { qp, rows, h, kinds }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn g_mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    fn g_t_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.qp.n];
        for (r, &zr) in self.rows.iter().zip(z) {
            if zr != 0.0 {
                for &(j, v) in r {
                    out[j] += v * zr;
                }
            }
        }
        out
    }
}

/// Reduced KKT system `[[Q + G' W G + reg, A'], [A, -reg]]` with a fixed
/// sparsity pattern; only the `G' W G` values change between iterations.
struct KktSystem {
    n: usize,
    p: usize,
    factor: LdlFactor,
    values: Vec<f64>,
    n_const: usize,
    pair_row: Vec<usize>,
    pair_coef: Vec<f64>,
    reg: f64,
}

impl KktSystem {
    fn new(prep: &Prepared, reg: f64) -> Self {
        let qp = prep.qp;
        let (n, p) = (qp.n, qp.eq_mat.nrows());
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            entries.push((i, i));
            values.push(reg);
        }
        for (r, c, v) in qp.quad.triplets() {
            if r <= c {
                entries.push((r, c));
                values.push(v);
            }
        }
        for (r, c, v) in qp.eq_mat.triplets() {
            entries.push((c, n + r));
            values.push(v);
        }
        for r in 0..p {
            entries.push((n + r, n + r));
            values.push(-reg);
        }
        let n_const = entries.len();
        let mut pair_row = Vec::new();
        let mut pair_coef = Vec::new();
        for (ri, row) in prep.rows.iter().enumerate() {
            for (a, &(j, gj)) in row.iter().enumerate() {
                for &(k, gk) in &row[a..] {
                    entries.push((j.min(k), j.max(k)));
                    pair_row.push(ri);
                    pair_coef.push(gj * gk);
                }
            }
        }
        values.resize(entries.len(), 0.0);
        let signs: Vec<f64> = (0..n + p).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        let factor = LdlFactor::analyze(n + p, &entries, &signs);
        KktSystem {
            n,
            p,
            factor,
            values,
            n_const,
            pair_row,
            pair_coef,
            reg,
        }
    }

    fn factor(&mut self, w: &[f64]) {
        for (k, (&r, &c)) in self.pair_row.iter().zip(&self.pair_coef).enumerate() {
            self.values[self.n_const + k] = w[r] * c;
        }
        self.factor.factor(&self.values, 1e-14, self.reg.max(1e-12));
    }

    /// Applies the unregularized matrix.
    fn apply(&self, prep: &Prepared, w: &[f64], v: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let (vx, vy) = v.split_at(n);
        let mut out = vec![0.0; n + p];
        let qx = prep.qp.quad.mul_vec(vx);
        let gx = prep.g_mul(vx);
        let wgx: Vec<f64> = gx.iter().zip(w).map(|(a, b)| a * b).collect();
        let gtwgx = prep.g_t_mul(&wgx);
        let aty = prep.qp.eq_mat.mul_t_vec(vy);
        for i in 0..n {
            out[i] = qx[i] + gtwgx[i] + aty[i];
        }
        let ax = prep.qp.eq_mat.mul_vec(vx);
        out[n..].copy_from_slice(&ax);
        out
    }

    fn solve(&self, prep: &Prepared, w: &[f64], rhs: &[f64], refine: usize) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.factor.solve(&mut sol);
        for _ in 0..refine {
            let kv = self.apply(prep, w, &sol);
            let mut r: Vec<f64> = rhs.iter().zip(&kv).map(|(a, b)| a - b).collect();
            let rn = inf_norm(&r);
            if rn <= 1e-15 * (1.0 + inf_norm(rhs)) {
                break;
            }
            self.factor.solve(&mut r);
            for (s, d) in sol.iter_mut().zip(&r) {
                *s += d;
            }
        }
        sol
    }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

enum Failure {
    Stalled(KktResiduals, usize),
    Diverged,
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

pub(super) fn solve(
    qp: &ConvexQP,
    settings: &QpSettings,
    warm: Option<&[f64]>,
) -> Result<QpSolution, QpError> {
    let prep = Prepared::new(qp);
    let first = run(&prep, settings, warm);
    // a poor warm start can break down numerically; retry from the default point
    let outcome = match first {
        Err(_) if warm.is_some() => run(&prep, settings, None),
        other => other,
    };
    match outcome {
        Ok(sol) => Ok(sol),
        Err(Failure::Diverged) => match phase_one(qp, settings) {
            Some(r) if r > phase_one_tol(qp, settings) => Err(QpError::Infeasible { residual: r }),
            _ => Err(QpError::Unbounded),
        },
        Err(Failure::Stalled(residuals, iterations)) => match phase_one(qp, settings) {
            Some(r) if r > phase_one_tol(qp, settings) => Err(QpError::Infeasible { residual: r }),
            _ => Err(QpError::MaxIterations {
                iterations,
                residuals,
            }),
        },
    }
}

fn phase_one_tol(qp: &ConvexQP, settings: &QpSettings) -> f64 {
    1e3 * settings.tol * (1.0 + inf_norm(&qp.eq_rhs).max(inf_norm(&qp.ineq_rhs)))
}

/// Minimum total constraint violation (with a tiny ridge), or `None` if even
/// that problem fails to solve.
fn phase_one(qp: &ConvexQP, settings: &QpSettings) -> Option<f64> {
    let n = qp.n;
    let mg = qp.ineq_mat.nrows();
    let p = qp.eq_mat.nrows();
    let nv = n + mg + 2 * p;
    let ridge = 1e-8;
    let quad =
        SparseMatrix::from_triplets(nv, nv, &(0..nv).map(|i| (i, i, ridge)).collect::<Vec<_>>());
    let mut lin = vec![0.0; nv];
    lin[n..].iter_mut().for_each(|v| *v = 1.0);
    let mut g = Vec::new();
    for (r, c, v) in qp.ineq_mat.triplets() {
        g.push((r, c, v));
    }
    for r in 0..mg {
        g.push((r, n + r, -1.0));
    }
    let mut a = Vec::new();
    for (r, c, v) in qp.eq_mat.triplets() {
        a.push((r, c, v));
    }
    for r in 0..p {
        a.push((r, n + mg + r, 1.0));
        a.push((r, n + mg + p + r, -1.0));
    }
    let mut lower = vec![0.0; nv];
    let mut upper = vec![f64::INFINITY; nv];
    lower[..n].copy_from_slice(&qp.lower);
    upper[..n].copy_from_slice(&qp.upper);
    let p1 = ConvexQP::new(quad, lin)
        .with_inequalities(SparseMatrix::from_triplets(mg, nv, &g), qp.ineq_rhs.clone())
        .with_equalities(SparseMatrix::from_triplets(p, nv, &a), qp.eq_rhs.clone())
        .with_bounds(lower, upper);
    let prep = Prepared::new(&p1);
    let relaxed = QpSettings {
        max_iter: settings.max_iter.max(100),
        ..settings.clone()
    };
    run(&prep, &relaxed, None)
        .ok()
        .map(|sol| sol.x[n..].iter().sum())
}

fn run(
    prep: &Prepared,
    settings: &QpSettings,
    warm: Option<&[f64]>,
) -> Result<QpSolution, Failure> {
    let qp = prep.qp;
    let (n, p, m) = (qp.n, qp.eq_mat.nrows(), prep.m());
    let mut kkt = KktSystem::new(prep, settings.static_reg);
    let tol = settings.tol;

    let mut it = initial_point(prep, &mut kkt, settings, warm);
    let q_norm = inf_norm(&qp.lin);
    let b_norm = inf_norm(&qp.eq_rhs);
    let h_norm = inf_norm(&prep.h);
    let mut last_res = KktResiduals::default();
    let mut small_steps = 0;
    // most nearly converged iterate, kept in case of a late breakdown
    let mut best: Option<(f64, Iterate, usize)> = None;
    let fallback = |best: Option<(f64, Iterate, usize)>| match best {
        Some((merit, b, k)) if merit <= NEAR_CONVERGED => Some(finish(prep, b, k, settings)),
        _ => None,
    };

    for iter in 0..=settings.max_iter {
        let qx = qp.quad.mul_vec(&it.x);
        let aty = qp.eq_mat.mul_t_vec(&it.y);
        let gtz = prep.g_t_mul(&it.z);
        let rd: Vec<f64> = (0..n)
            .map(|i| qx[i] + qp.lin[i] + aty[i] + gtz[i])
            .collect();
        let ax = qp.eq_mat.mul_vec(&it.x);
        let rp: Vec<f64> = ax.iter().zip(&qp.eq_rhs).map(|(a, b)| a - b).collect();
        let gx = prep.g_mul(&it.x);
        let rg: Vec<f64> = (0..m).map(|k| gx[k] + it.s[k] - prep.h[k]).collect();
        let gap = dot(&it.s, &it.z);
        let mu = if m > 0 { gap / m as f64 } else { 0.0 };

        if it.x.iter().any(|v| !v.is_finite()) || inf_norm(&it.x) > 1e20 {
            return fallback(best).ok_or(Failure::Diverged);
        }

        let pobj = 0.5 * dot(&it.x, &qx) + dot(&qp.lin, &it.x);
        let d_scale = 1.0
            + q_norm
                .max(inf_norm(&qx))
                .max(inf_norm(&aty))
                .max(inf_norm(&gtz));
        let p_scale = 1.0 + b_norm.max(inf_norm(&ax));
        let g_scale = 1.0 + h_norm.max(inf_norm(&gx));
        let converged = inf_norm(&rd) <= tol * d_scale
            && inf_norm(&rp) <= tol * p_scale
            && inf_norm(&rg) <= tol * g_scale
            && mu <= tol * (1.0 + pobj.abs())
            && it.s.iter().zip(&it.z).all(|(s, z)| s * z <= tol);
        last_res = KktResiduals {
            stationarity: inf_norm(&rd),
            primal: inf_norm(&rp).max(inf_norm(&rg)),
            complementarity: it.s.iter().zip(&it.z).fold(0.0, |a, (s, z)| a.max(s * z)),
            dual_sign: 0.0,
        };
        log::trace!(
            "ipm {iter}: rd {:.2e} rp {:.2e} rg {:.2e} mu {:.2e} max sz {:.2e} |x| {:.2e}",
            inf_norm(&rd),
            inf_norm(&rp),
            inf_norm(&rg),
            mu,
            it.s.iter()
                .zip(&it.z)
                .fold(0.0f64, |a, (s, z)| a.max(s * z)),
            inf_norm(&it.x)
        );
        if converged {
            return Ok(finish(prep, it, iter, settings));
        }
        let merit = (inf_norm(&rd) / d_scale)
            .max(inf_norm(&rp) / p_scale)
            .max(inf_norm(&rg) / g_scale)
            .max(last_res.complementarity)
            .max(mu / (1.0 + pobj.abs()))
            / tol;
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, it.clone(), iter));
        }
        if iter == settings.max_iter {
            break;
        }

        let w: Vec<f64> = (0..m).map(|k| it.z[k] / it.s[k]).collect();
        kkt.factor(&w);

        // predictor
        let rc_aff: Vec<f64> = (0..m).map(|k| it.s[k] * it.z[k]).collect();
        let (_, _, dz_a, ds_a) = newton(prep, &kkt, &w, &it, &rd, &rp, &rg, &rc_aff, settings);
        let alpha_aff = max_step(&it.s, &ds_a).min(max_step(&it.z, &dz_a));
        let sigma = if m > 0 {
            let mu_aff = (0..m)
                .map(|k| (it.s[k] + alpha_aff * ds_a[k]) * (it.z[k] + alpha_aff * dz_a[k]))
                .sum::<f64>()
                / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // corrector
        let rc: Vec<f64> = (0..m)
            .map(|k| it.s[k] * it.z[k] + ds_a[k] * dz_a[k] - sigma * mu)
            .collect();
        let (dx, dy, dz, ds) = newton(prep, &kkt, &w, &it, &rd, &rp, &rg, &rc, settings);
        let alpha_max = max_step(&it.s, &ds).min(max_step(&it.z, &dz));
        let alpha = (0.99 * alpha_max).min(1.0);
        if alpha < 1e-10 {
            small_steps += 1;
            if small_steps > 5 {
                break;
            }
        } else {
            small_steps = 0;
        }
        for i in 0..n {
            it.x[i] += alpha * dx[i];
        }
        for i in 0..p {
            it.y[i] += alpha * dy[i];
        }
        for k in 0..m {
            it.z[k] = (it.z[k] + alpha * dz[k]).max(1e-300);
            it.s[k] = (it.s[k] + alpha * ds[k]).max(1e-300);
        }
    }
    fallback(best).ok_or(Failure::Stalled(last_res, settings.max_iter))
}

#[allow(clippy::too_many_arguments)]
fn newton(
    prep: &Prepared,
    kkt: &KktSystem,
    w: &[f64],
    it: &Iterate,
    rd: &[f64],
    rp: &[f64],
    rg: &[f64],
    rc: &[f64],
    settings: &QpSettings,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, m) = (prep.qp.n, prep.m());
    // dz = W G dx + (-rc + z rg) / s ; ds = -rg - G dx
    let tmp: Vec<f64> = (0..m)
        .map(|k| (-rc[k] + it.z[k] * rg[k]) / it.s[k])
        .collect();
    let gt_tmp = prep.g_t_mul(&tmp);
    let mut rhs = Vec::with_capacity(n + rp.len());
    for i in 0..n {
        rhs.push(-rd[i] - gt_tmp[i]);
    }
    for r in rp {
        rhs.push(-r);
    }
    let sol = kkt.solve(prep, w, &rhs, settings.refine_steps);
    let dx = sol[..n].to_vec();
    let dy = sol[n..].to_vec();
    let gdx = prep.g_mul(&dx);
    let dz: Vec<f64> = (0..m).map(|k| w[k] * gdx[k] + tmp[k]).collect();
    let ds: Vec<f64> = (0..m).map(|k| -rg[k] - gdx[k]).collect();
    (dx, dy, dz, ds)
}

fn initial_point(
    prep: &Prepared,
    kkt: &mut KktSystem,
    settings: &QpSettings,
    warm: Option<&[f64]>,
) -> Iterate {
    let qp = prep.qp;
    let (n, p, m) = (qp.n, qp.eq_mat.nrows(), prep.m());
    let ones = vec![1.0; m];
    kkt.factor(&ones);
    let x = match warm {
        Some(w) => w.to_vec(),
        None => {
            let gth = prep.g_t_mul(&prep.h);
            let mut rhs: Vec<f64> = (0..n).map(|i| -qp.lin[i] + gth[i]).collect();
            rhs.extend_from_slice(&qp.eq_rhs);
            let sol = kkt.solve(prep, &ones, &rhs, settings.refine_steps);
            sol[..n].to_vec()
        }
    };
    let gx = prep.g_mul(&x);
    let slack: Vec<f64> = (0..m).map(|k| prep.h[k] - gx[k]).collect();
    let (s, z) = if warm.is_some() {
        (slack.iter().map(|v| v.max(1.0)).collect(), vec![1.0; m])
    } else {
        let shift = |v: &[f64]| -> Vec<f64> {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            if lo > 0.0 {
                v.to_vec()
            } else {
                v.iter().map(|a| a + 1.0 - lo).collect()
            }
        };
        let zt: Vec<f64> = slack.iter().map(|v| -v).collect();
        (shift(&slack), shift(&zt))
    };
    Iterate {
        x,
        y: vec![0.0; p],
        z,
        s,
    }
}

fn duals_of(prep: &Prepared, y: &[f64], z: &[f64]) -> QpDuals {
    let qp = prep.qp;
    let n = qp.n;
    let mut duals = QpDuals {
        eq: y.to_vec(),
        ineq: vec![0.0; qp.ineq_mat.nrows()],
        lower: vec![0.0; n],
        upper: vec![0.0; n],
    };
    for (k, kind) in prep.kinds.iter().enumerate() {
        match *kind {
            RowKind::General(r) => duals.ineq[r] = z[k],
            RowKind::Lower(i) => duals.lower[i] = z[k],
            RowKind::Upper(i) => duals.upper[i] = z[k],
        }
    }
    duals
}

/// Merit (in units of `tol`) below which a stalled run still returns its best iterate.
const NEAR_CONVERGED: f64 = 1e3;

fn finish(prep: &Prepared, it: Iterate, iterations: usize, settings: &QpSettings) -> QpSolution {
    let qp = prep.qp;
    let tol = settings.tol;
    let mut duals = duals_of(prep, &it.y, &it.z);
    let mut residuals = qp.kkt_residuals(&it.x, &duals);
    let mut x = it.x.clone();
    // widening guesses of the active set; degenerate rows have s ~ z
    for ratio in [1.0, 1e2, 1e-2, 1e4, 1e-4] {
        let active: Vec<usize> = (0..prep.m())
            .filter(|&k| it.s[k] < ratio * it.z[k])
            .collect();
        if let Some((px, py, pz)) = polish(prep, &active, settings) {
            let pd = duals_of(prep, &py, &pz);
            let pr = qp.kkt_residuals(&px, &pd);
            if pr.max() <= tol.max(residuals.max()) {
                x = px;
                duals = pd;
                residuals = pr;
                break;
            }
        }
    }
    let objective = qp.objective(&x);
    let status = if residuals.max() <= tol {
        QpStatus::Solved
    } else {
        QpStatus::SolvedInaccurate
    };
    QpSolution {
        x,
        duals,
        residuals,
        objective,
        iterations,
        status,
    }
}

/// Re-solves the KKT system with the `active` rows held as equalities and
/// the others dropped.
fn polish(
    prep: &Prepared,
    active: &[usize],
    settings: &QpSettings,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let qp = prep.qp;
    let (n, p) = (qp.n, qp.eq_mat.nrows());
    let na = active.len();
    let dim = n + p + na;
    let reg = settings.static_reg.max(1e-12);
    let mut entries = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        entries.push((i, i));
        values.push(reg);
    }
    for (r, c, v) in qp.quad.triplets() {
        if r <= c {
            entries.push((r, c));
            values.push(v);
        }
    }
    for (r, c, v) in qp.eq_mat.triplets() {
        entries.push((c, n + r));
        values.push(v);
    }
    for (a, &k) in active.iter().enumerate() {
        for &(j, v) in &prep.rows[k] {
            entries.push((j, n + p + a));
            values.push(v);
        }
    }
    for r in n..dim {
        entries.push((r, r));
        values.push(-reg);
    }
    let signs: Vec<f64> = (0..dim).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
    let mut f = LdlFactor::analyze(dim, &entries, &signs);
    f.factor(&values, 1e-14, reg);

    let apply = |v: &[f64]| -> Vec<f64> {
        let (vx, rest) = v.split_at(n);
        let (vy, vz) = rest.split_at(p);
        let mut out = qp.quad.mul_vec(vx);
        let aty = qp.eq_mat.mul_t_vec(vy);
        for i in 0..n {
            out[i] += aty[i];
        }
        for (a, &k) in active.iter().enumerate() {
            for &(j, g) in &prep.rows[k] {
                out[j] += g * vz[a];
            }
        }
        out.extend(qp.eq_mat.mul_vec(vx));
        for &k in active {
            out.push(prep.rows[k].iter().map(|&(j, g)| g * vx[j]).sum());
        }
        out
    };
    let mut rhs: Vec<f64> = qp.lin.iter().map(|v| -v).collect();
    rhs.extend_from_slice(&qp.eq_rhs);
    rhs.extend(active.iter().map(|&k| prep.h[k]));
    let mut sol = rhs.clone();
    f.solve(&mut sol);
    for _ in 0..10 {
        let kv = apply(&sol);
        let mut r: Vec<f64> = rhs.iter().zip(&kv).map(|(a, b)| a - b).collect();
        if inf_norm(&r) <= 1e-15 * (1.0 + inf_norm(&rhs)) {
            break;
        }
        f.solve(&mut r);
        for (s, d) in sol.iter_mut().zip(&r) {
            *s += d;
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol[..n].to_vec();
    let y = sol[n..n + p].to_vec();
    let mut z = vec![0.0; prep.m()];
    for (a, &k) in active.iter().enumerate() {
        z[k] = sol[n + p + a];
    }
    Some((x, y, z))
}
