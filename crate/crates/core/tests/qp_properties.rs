mod common;

use common::{active_set_oracle, DenseQp};
use idrcde::affine::AffineForm;
use idrcde::lasso::fit_penalized_ls;
use idrcde::qp::{
    parse_qp_dump, solve_qp, solve_qp_warm, split_variables, write_qp_dump, QpSettings,
    SplitSubproblem, SquareTerm,
};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interior_point_matches_active_set_enumeration(seed in any::<u64>(), n in 1usize..5, m in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = DenseQp::random(&mut rng, n, m);
        let x_star = active_set_oracle(&dense);
        let sol = solve_qp(&dense.to_convex_qp(), &QpSettings::default()).unwrap();
        let x = DVector::from_vec(sol.x.clone());
        let f_star = dense.objective(&x_star);
        prop_assert!((dense.objective(&x) - f_star).abs() <= 1e-6 * (1.0 + f_star.abs()));
        prop_assert!((x - x_star).amax() <= 1e-4);
        prop_assert!(sol.residuals.max() <= 1e-6);
    }

    #[test]
    fn warm_start_reaches_the_same_solution(seed in any::<u64>(), n in 1usize..5, m in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = DenseQp::random(&mut rng, n, m).to_convex_qp();
        let settings = QpSettings::default();
        let cold = solve_qp(&qp, &settings).unwrap();
        let warm_point: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let warm = solve_qp_warm(&qp, &settings, Some(&warm_point)).unwrap();
        prop_assert!((cold.objective - warm.objective).abs() <= 1e-6 * (1.0 + cold.objective.abs()));
    }

    #[test]
    fn dump_roundtrip_preserves_problem(seed in any::<u64>(), n in 1usize..5, m in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = DenseQp::random(&mut rng, n, m.max(1)).to_convex_qp();
        let text = write_qp_dump(&qp);
        let back = parse_qp_dump(&text).unwrap();
        prop_assert_eq!(&back, &qp);
        prop_assert_eq!(write_qp_dump(&back), text);
    }
}

fn lasso_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let design: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| design[i * k] * 2.0 - design[i * k + 1] + rng.random_range(-0.3..0.3))
        .collect();
    (design, y)
}

/// Largest violation of the lasso optimality conditions at `c`.
fn subgradient_gap(design: &[f64], k: usize, y: &[f64], lambda: f64, c: &[f64]) -> f64 {
    let n = y.len();
    let mut worst: f64 = 0.0;
    for j in 0..k {
        let g: f64 = (0..n)
            .map(|i| {
                let fit: f64 = (0..k).map(|l| design[i * k + l] * c[l]).sum();
                design[i * k + j] * (fit - y[i])
            })
            .sum::<f64>()
            / n as f64;
        let gap = if c[j].abs() > 1e-7 {
            (g + lambda * c[j].signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(gap);
    }
    worst
}

#[test]
fn split_lift_solves_lasso() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &lambda in &[0.01, 0.1, 0.5] {
        let (n, k) = (30, 5);
        let (design, y) = lasso_problem(&mut rng, n, k);
        let squares = (0..n)
            .map(|i| SquareTerm {
                weight: 0.5 / n as f64,
                base: AffineForm::new((0..k).map(|j| (j, design[i * k + j])).collect(), -y[i]),
                pos: vec![],
                neg: vec![],
            })
            .collect();
        let sub = SplitSubproblem {
            n: k,
            lin: vec![0.0; k],
            squares,
            abs_penalties: (0..k).map(|j| (j, lambda)).collect(),
            lower: vec![-1e3; k],
            upper: vec![1e3; k],
            split_ridge: 1e-12,
            ..Default::default()
        };
        let (qp, _layout) = split_variables(&sub);
        let settings = QpSettings {
            tol: 1e-10,
            ..Default::default()
        };
        let sol = solve_qp(&qp, &settings).unwrap();
        let c = &sol.x[..k];
        let gap = subgradient_gap(&design, k, &y, lambda, c);
        assert!(gap < 1e-6, "lambda {lambda}: gap {gap}");

        let cd = fit_penalized_ls(&design, k, &y, &vec![1.0; n], lambda, &vec![true; k]).unwrap();
        for j in 0..k {
            assert!((cd.coef[j] - c[j]).abs() < 1e-5, "{:?} vs {:?}", cd.coef, c);
        }
    }
}

#[test]
fn split_is_complementary_at_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 3;
    let residuals: Vec<AffineForm> = (0..4)
        .map(|_| {
            AffineForm::new(
                (0..n).map(|j| (j, rng.random_range(-1.0..1.0))).collect(),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let squares = (0..4)
        .map(|k| SquareTerm {
            weight: 1.0,
            base: AffineForm::constant(0.0),
            pos: vec![(k, 1.0)],
            neg: vec![],
        })
        .collect();
    let sub = SplitSubproblem {
        n,
        quad: (0..n).map(|j| (j, j, 0.1)).collect(),
        lin: vec![0.3, -0.2, 0.1],
        residuals,
        squares,
        abs_penalties: vec![(0, 0.2), (2, 0.05)],
        lower: vec![-5.0; n],
        upper: vec![5.0; n],
        split_ridge: 1e-12,
        ..Default::default()
    };
    let (qp, layout) = split_variables(&sub);
    let sol = solve_qp(
        &qp,
        &QpSettings {
            tol: 1e-10,
            ..Default::default()
        },
    )
    .unwrap();
    for k in 0..layout.n_res {
        let prod = sol.x[layout.pos(k)] * sol.x[layout.neg(k)];
        assert!(prod.abs() < 1e-7, "residual {k}: {prod}");
    }
    for &(_, p, m) in &layout.abs {
        assert!((sol.x[p] * sol.x[m]).abs() < 1e-7);
    }
    let lifted = layout.lift(&sub, &sol.x[..n]);
    assert!((qp.objective(&lifted) - sol.objective).abs() < 1e-7);
}
