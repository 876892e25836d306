//! Regularized gradient statistics against image-kernel and theta-series oracles.

use heat_ito::config::ScenarioConfig;
use heat_ito::quadrature::{adaptive_integrate, GaussLegendre};
use heat_ito::regularization::{
    divergence_fit, epsilon_convergence_table, grad_square_mean, quantity_value, table_column, Quantity,
    DEFAULT_LADDER, TABLE_TERMS,
};
use heat_ito::semigroup::registry;
use heat_ito::spectral::{counterterm, EigenSystem};
use heat_ito::stransform::StEngine;
use heat_ito::window::window;
use proptest::prelude::*;

const KAPPA: f64 = 0.5;

/// `∂x g_t(x, y)` by reflection, free kernel of variance `2κt`.
fn images_dx(t: f64, x: f64, y: f64) -> f64 {
    let v = 2.0 * KAPPA * t;
    let p1 = |z: f64| -z / v * (-z * z / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    (-12..=12)
        .map(|k| {
            let s = 2.0 * k as f64;
            p1(x - y + s) - p1(x + y + s)
        })
        .sum()
}

fn big() -> EigenSystem {
    EigenSystem::new(4096, KAPPA).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn grad_square_mean_matches_image_quadrature(t in 0.05f64..1.0, x in 0.05f64..0.95, eps in 3e-3f64..3e-2) {
        let rule = GaussLegendre::new(400).unwrap();
        let inner = |s: f64| rule.integrate(0.0, 1.0, |y| images_dx(s + eps, x, y).powi(2));
        let oracle = adaptive_integrate(&inner, 0.0, t, 1e-12);
        let got = grad_square_mean(t, x, eps, &EigenSystem::new(512, KAPPA).unwrap()).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-7 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn counterterm_grows_as_epsilon_shrinks(x in 0.01f64..0.99, e1 in 1e-5f64..1e-1, r in 0.1f64..0.9) {
        let b = big();
        prop_assert!(counterterm(x, e1 * r, &b).unwrap() > counterterm(x, e1, &b).unwrap());
    }
}

#[test]
fn interior_gradient_square_is_counterterm_minus_one() {
    // Σ 2cos(2πnx) e^{-π²n²ε} = -1 + O(e^{-x²/ε}) away from the boundary
    let b = big();
    for x in [0.3, 0.37, 0.5] {
        for eps in [1e-3, 1e-4, 1e-5] {
            let diff = grad_square_mean(5.0, x, eps, &b).unwrap() - counterterm(x, eps, &b).unwrap();
            assert!((diff + 1.0).abs() <= 1e-10, "x {x} eps {eps}: {diff}");
        }
    }
}

#[test]
fn renormalized_mean_converges_to_its_series_limit() {
    let b = big();
    let (t, x) = (0.5, 0.37);
    let limit = -1.0
        - b.modes()
            .map(|n| 2.0 * (-2.0 * b.lambda(n) * t).exp() * (std::f64::consts::PI * n as f64 * x).cos().powi(2))
            .sum::<f64>();
    let mut prev = f64::INFINITY;
    for &eps in &DEFAULT_LADDER {
        let err = (quantity_value(Quantity::RenormalizedMean, t, x, eps, &b).unwrap() - limit).abs();
        assert!(err < prev, "eps {eps}");
        prev = err;
    }
    assert!(prev <= 1e-4, "{prev}");
}

#[test]
fn counterterm_fit_has_slope_minus_one_half() {
    let fit = divergence_fit(Quantity::Counterterm, 0.5, 0.5, &DEFAULT_LADDER, &big()).unwrap();
    assert!((fit.slope + 0.5).abs() <= 1e-9, "{}", fit.slope);
    assert!(fit.r_squared > 1.0 - 1e-12);
    // intercept of 1 / (2√(πε))
    assert!((fit.intercept - (0.5 / std::f64::consts::PI.sqrt()).ln()).abs() <= 1e-8);
}

#[test]
fn gradient_fit_bends_toward_minus_one_half() {
    let b = big();
    let coarse = divergence_fit(Quantity::GradSquareMean, 0.5, 0.5, &DEFAULT_LADDER, &b).unwrap();
    let fine = divergence_fit(Quantity::GradSquareMean, 0.5, 0.5, &[1e-6, 3e-7, 1e-7], &EigenSystem::new(16384, KAPPA).unwrap())
        .unwrap();
    assert!(coarse.slope < -0.55, "{}", coarse.slope);
    assert!(fine.slope > coarse.slope && (fine.slope + 0.5).abs() < 0.01, "{}", fine.slope);
}

#[test]
fn epsilon_table_layout_and_convergence() {
    let cfg = ScenarioConfig::default_desk();
    let engine = StEngine::new(EigenSystem::new(64, KAPPA).unwrap(), cfg.quadrature).unwrap();
    let ladder = [1e-2, 1e-3, 1e-4, 1e-5];
    let rows = epsilon_convergence_table(
        &engine,
        &registry("tanh").unwrap(),
        &window("poly_bump").unwrap(),
        &cfg.shift("single").unwrap(),
        0.5,
        &ladder,
    )
    .unwrap();
    assert_eq!(rows.len(), ladder.len() * TABLE_TERMS.len());
    for term in TABLE_TERMS {
        let col = table_column(&rows, term);
        assert_eq!(col.len(), ladder.len());
        assert!(col[0].cauchy_diff.is_none());
        assert!(col[1..].iter().all(|r| r.cauchy_diff.is_some()));
    }
    let diffs: Vec<f64> = table_column(&rows, "lhs").iter().filter_map(|r| r.cauchy_diff).collect();
    assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
}
