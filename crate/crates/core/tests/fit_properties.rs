mod common;

use idrcde::dc::DcProgram;
use idrcde::fit::{build_program, fit, verify_runs, FitSpec, FittedIDR, Surrogate};
use idrcde::model::{AllocParams, RuleParams};
use idrcde::{Action, Dataset, UtilitySpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let z = (0..n).map(|_| rng.random_range(-3.0..5.0)).collect();
    let prop = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    Dataset::new(p, x, a, z, prop).unwrap()
}

fn spec(l_alloc: f64, l_rule: f64, mcp: bool, xi1: f64, xi2: f64) -> FitSpec {
    FitSpec {
        lambda_alloc: l_alloc,
        lambda_rule: l_rule,
        surrogate: if mcp {
            Surrogate::McpLike { a: 3.0 }
        } else {
            Surrogate::PlainL1
        },
        utility: UtilitySpec::PiecewiseLinear { xi1, xi2 },
        ..FitSpec::default()
    }
}

/// Random point of the program's variable space with `sigma` in `[0, 1]`.
fn random_point(rng: &mut ChaCha8Rng, dim: usize, sigma_from: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            if k < sigma_from {
                rng.random_range(-3.0..3.0)
            } else {
                rng.random_range(0.0..1.0)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_components_are_convex(
        seed in any::<u64>(),
        n in 1usize..15,
        p in 1usize..4,
        l in 0.0f64..0.5,
        mcp in any::<bool>(),
        xi1 in 0.0f64..0.9,
        xi2 in 1.1f64..4.0,
    ) {
        let data = dataset(seed, n, p);
        let s = spec(l, l, mcp, xi1, xi2);
        let prog = build_program(&data, &s, Action::Plus).unwrap();
        let lay = prog.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..8 {
            let x = random_point(&mut rng, lay.dim(), lay.sigma_minus(0));
            let y = random_point(&mut rng, lay.dim(), lay.sigma_minus(0));
            let gx = prog.g_value(&x);
            let grad = prog.g_gradient(&x);
            let lin: f64 = grad.iter().zip(y.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
            let scale = 1.0 + gx.abs() + prog.g_value(&y).abs();
            prop_assert!(prog.g_value(&y) >= gx + lin - 1e-9 * scale);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let fmid = prog.f_value(&mid);
            let favg = 0.5 * (prog.f_value(&x) + prog.f_value(&y));
            prop_assert!(fmid <= favg + 1e-9 * (1.0 + favg.abs()));
        }
    }

    #[test]
    fn split_difference_matches_indicator_oracle(
        seed in any::<u64>(),
        n in 1usize..15,
        p in 1usize..4,
        l_alloc in 0.0f64..0.5,
        l_rule in 0.0f64..0.5,
        mcp in any::<bool>(),
        xi1 in 0.0f64..0.9,
        xi2 in 1.1f64..4.0,
        minus in any::<bool>(),
    ) {
        let data = dataset(seed, n, p);
        let s = spec(l_alloc, l_rule, mcp, xi1, xi2);
        let bias = if minus { Action::Minus } else { Action::Plus };
        let prog = build_program(&data, &s, bias).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let alloc = AllocParams {
            b: (0..p).map(|_| rng.random_range(-2.0..2.0)).collect(),
            b0: rng.random_range(-2.0..2.0),
        };
        let z = prog.initial_point(&beta, &alloc);
        let h = prog.f_value(&z) - prog.g_value(&z);
        let oracle = common::direct_objective(&data, &s, &RuleParams::new(beta, bias), &alloc);
        prop_assert!((h - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()), "{} vs {}", h, oracle);
    }
}

fn small_fit(seed: u64) -> (Dataset, FitSpec, FittedIDR) {
    let data = dataset(seed, 24, 3);
    let s = FitSpec {
        record_iterates: true,
        ..spec(0.05, 0.02, true, 0.0, 2.0)
    };
    let fitted = fit(&data, &s).unwrap();
    (data, s, fitted)
}

#[test]
fn fit_is_deterministic_and_roundtrips() {
    let (data, s, a) = small_fit(3);
    let b = fit(&data, &s).unwrap();
    assert_eq!(a, b);
    let back = FittedIDR::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn fit_reports_the_best_bias_and_matching_direct_objective() {
    for seed in 0..4 {
        let (data, s, f) = small_fit(seed);
        let best = f.bias_objectives[0].min(f.bias_objectives[1]);
        assert!((f.objective - best).abs() <= 1e-12 * (1.0 + best.abs()));
        assert_eq!(f.runs[f.selected_run].objective, f.objective);
        let oracle = common::direct_objective(&data, &s, &f.rule, &f.alloc);
        assert!(
            (f.objective_direct - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()),
            "{} vs {oracle}",
            f.objective_direct
        );
        assert!(f.objective_direct <= f.objective + 1e-6 * (1.0 + f.objective.abs()));
    }
}

#[test]
fn recorded_iterates_descend_and_stay_feasible() {
    for seed in 10..14 {
        let (data, s, f) = small_fit(seed);
        let check = verify_runs(&data, &s, &f).unwrap();
        assert_eq!(check.runs, f.runs.len());
        assert!(check.max_descent_excess <= 1e-7, "{check:?}");
        assert!(check.max_violation <= 1e-7, "{check:?}");
    }
}

#[test]
fn verification_needs_recorded_iterates() {
    let data = dataset(1, 10, 3);
    let s = FitSpec::default();
    let f = fit(&data, &s).unwrap();
    assert!(verify_runs(&data, &s, &f).is_err());
}

#[test]
fn invalid_settings_are_rejected() {
    let data = dataset(1, 10, 3);
    for bad in [
        FitSpec {
            lambda_rule: -1.0,
            ..FitSpec::default()
        },
        FitSpec {
            product_scale: 0.0,
            ..FitSpec::default()
        },
        FitSpec {
            phi_rule: vec![1.0; 2],
            ..FitSpec::default()
        },
        FitSpec {
            utility: UtilitySpec::Identity,
            ..FitSpec::default()
        },
    ] {
        assert!(fit(&data, &bad).is_err(), "{bad:?}");
    }
}
