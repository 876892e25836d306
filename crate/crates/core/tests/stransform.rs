//! The S-transform identity against closed forms, plus time additivity.

use heat_ito::quadrature::GaussLegendre;
use heat_ito::semigroup::registry;
use heat_ito::spectral::{sigma2, EigenSystem, Envelope, ShiftField, ShiftMode};
use heat_ito::stransform::{QuadratureSettings, StEngine};
use heat_ito::window::{window, WINDOW_NAMES};
use proptest::prelude::*;

fn settings() -> QuadratureSettings {
    QuadratureSettings {
        hermite_order: 64,
        legendre_points: 256,
        stieltjes_panels: 128,
        panel_points: 4,
    }
}

fn engine() -> StEngine {
    StEngine::new(EigenSystem::new(64, 0.5).unwrap(), settings()).unwrap()
}

fn constant_shift(n: usize, amp: f64) -> ShiftField {
    ShiftField::single(n, Envelope::Constant { amp }, 1.0)
}

/// `∫₀¹ h(x) l(x) dx` by Gauss–Legendre over the window support.
fn pair(win: &str, h: impl Fn(f64) -> f64) -> f64 {
    let w = window(win).unwrap();
    let (a, b) = w.support();
    GaussLegendre::new(400).unwrap().integrate(a, b, |x| h(x) * w.l(x))
}

#[test]
fn linear_lhs_is_the_paired_mean() {
    let eng = engine();
    let lin = registry("linear").unwrap();
    let b = *eng.basis();
    for (n, amp) in [(1, 1.5), (2, -0.7), (3, 0.4)] {
        for t in [0.1, 0.5, 1.0] {
            let lam = b.lambda(n);
            // Duhamel of a constant envelope
            let i_n = amp * (1.0 - (-lam * t).exp()) / lam;
            let oracle = pair("poly_bump", |x| i_n * b.e(n, x));
            let got = eng
                .residual(t, &lin, &window("poly_bump").unwrap(), &constant_shift(n, amp))
                .unwrap();
            assert!((got.lhs - oracle).abs() <= 1e-12 * oracle.abs().max(1e-3), "n={n} t={t}");
            assert!(got.residual.abs() <= 1e-8 * got.scale + 1e-15, "n={n} t={t}");
        }
    }
}

#[test]
fn quadratic_lhs_is_mean_square_plus_variance() {
    let eng = engine();
    let quad = registry("quadratic").unwrap();
    let b = *eng.basis();
    let lam = b.lambda(1);
    for t in [0.1, 0.5, 1.0] {
        let i_1 = 1.5 * (1.0 - (-lam * t).exp()) / lam;
        let oracle = pair("center_bump", |x| {
            let m = i_1 * b.e(1, x);
            m * m + sigma2(t, x, 0.0, &b).unwrap()
        });
        let got = eng
            .residual(t, &quad, &window("center_bump").unwrap(), &constant_shift(1, 1.5))
            .unwrap();
        assert!((got.lhs - oracle).abs() <= 1e-10 * oracle.abs(), "t={t}: {} vs {oracle}", got.lhs);
    }
}

#[test]
fn regularized_linear_lhs_carries_the_mode_damping() {
    let lin = registry("linear").unwrap();
    let win = window("poly_bump").unwrap();
    let f = constant_shift(1, 1.5);
    let base = engine().residual(0.5, &lin, &win, &f).unwrap().lhs;
    let lam = engine().basis().lambda(1);
    for eps in [1e-1, 1e-2, 1e-4] {
        let got = engine().regularized(eps).unwrap().residual(0.5, &lin, &win, &f).unwrap();
        assert!((got.lhs - (-lam * eps).exp() * base).abs() <= 1e-12 * base.abs());
        assert!(got.relative_residual() <= 1e-8, "eps {eps}: {}", got.relative_residual());
    }
}

#[test]
fn zero_shift_linear_terms_vanish() {
    let got = engine()
        .residual(0.5, &registry("linear").unwrap(), &window("poly_bump").unwrap(), &ShiftField::zero(1.0))
        .unwrap();
    assert_eq!(got.lhs, 0.0);
    assert_eq!(got.ito_integral, 0.0);
    assert_eq!(got.relative_residual(), 0.0);
}

#[test]
fn terms_are_additive_in_time() {
    let eng = engine();
    let win = window("center_bump").unwrap();
    let f = ShiftField {
        modes: vec![
            ShiftMode {
                n: 1,
                envelope: Envelope::Sine {
                    amp: 1.0,
                    omega: 3.0,
                    phase: 0.2,
                },
            },
            ShiftMode {
                n: 3,
                envelope: Envelope::Exp { amp: 0.8, rate: 1.0 },
            },
        ],
        horizon: 1.0,
    };
    for name in ["quadratic", "cosine", "tanh"] {
        let obs = registry(name).unwrap();
        let whole = eng.residual(0.8, &obs, &win, &f).unwrap();
        let first = eng.residual(0.3, &obs, &win, &f).unwrap();
        let second = eng.residual_between(0.3, 0.8, &obs, &win, &f).unwrap();
        assert!((second.init - first.lhs).abs() <= 1e-12 * whole.scale, "{name}");
        assert!((second.lhs - whole.lhs).abs() <= 1e-12 * whole.scale, "{name}");
        for (a, b, c) in [
            (first.ito_integral, second.ito_integral, whole.ito_integral),
            (first.wick_drift, second.wick_drift, whole.wick_drift),
            (first.ito_correction, second.ito_correction, whole.ito_correction),
        ] {
            assert!((a + b - c).abs() <= 1e-7 * whole.scale, "{name}: {a} + {b} vs {c}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identity_holds_for_random_scenarios(
        t in 0.05f64..1.0,
        obs_i in 0usize..4,
        win_i in 0usize..4,
        n in 1usize..5,
        amp in -2.0f64..2.0,
    ) {
        let obs = registry(["linear", "quadratic", "cosine", "tanh"][obs_i]).unwrap();
        let win = window(WINDOW_NAMES[win_i]).unwrap();
        let got = engine().residual(t, &obs, &win, &constant_shift(n, amp)).unwrap();
        let limit = if obs_i == 0 { 1e-8 } else { 1e-6 };
        // symmetric windows annihilate modes odd about 1/2, leaving only roundoff
        prop_assert!(got.residual.abs() <= limit * got.scale + 1e-15, "{:?}", got);
    }
}
