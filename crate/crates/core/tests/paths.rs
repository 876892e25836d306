//! Monte Carlo checks of the path sampler and estimators against moments
//! that are known in closed form.

use heat_ito::paths::{
    damped_basis, estimate_stransform, pathwise_ito_integral, sample_path, stoch_exponential, Estimate,
    EstimatorMode, FieldView, PathwiseEvaluator, SamplerConfig, Scheme, TimeGrid,
};
use heat_ito::quadrature::GaussLegendre;
use heat_ito::semigroup::registry;
use heat_ito::spectral::{mean_bundle, sigma2, EigenSystem, Envelope, ShiftField};
use heat_ito::window::window;

const SEED: u64 = 7;

fn sample_stat(n: usize, stream0: u64, f: impl Fn(u64) -> f64) -> Estimate {
    let values: Vec<f64> = (0..n as u64).map(|i| f(stream0 + i)).collect();
    Estimate::from_samples(&values)
}

#[test]
fn exact_ou_marginals_are_exact_for_any_step_count() {
    let basis = EigenSystem::new(3, 0.5).unwrap();
    let t = 0.5;
    for steps in [1, 8] {
        let grid = TimeGrid::uniform(t, steps).unwrap();
        let paths: Vec<_> = (0..20_000)
            .map(|i| sample_path(&basis, Scheme::ExactOu, grid, 0.0, SEED, i).unwrap())
            .collect();
        for n in 1..=3 {
            let lam = basis.lambda(n);
            let var = (1.0 - (-2.0 * lam * t).exp()) / (2.0 * lam);
            let sq: Vec<f64> = paths.iter().map(|p| p.coeff(n, steps).powi(2)).collect();
            let z = Estimate::from_samples(&sq).z_against(var);
            assert!(z <= 4.0, "steps {steps} mode {n}: z {z}");
        }
        let cross: Vec<f64> = paths.iter().map(|p| p.coeff(1, steps) * p.coeff(2, steps)).collect();
        let z = Estimate::from_samples(&cross).z_against(0.0);
        assert!(z <= 4.0, "modes 1 and 2 correlated: z {z}");
    }
}

#[test]
fn exp_euler_matches_its_discrete_variance() {
    let basis = EigenSystem::new(3, 0.5).unwrap();
    let steps = 256;
    let grid = TimeGrid::uniform(0.25, steps).unwrap();
    let delta = grid.delta();
    let paths: Vec<_> = (0..10_000)
        .map(|i| sample_path(&basis, Scheme::ExpEuler, grid, 0.0, SEED, i).unwrap())
        .collect();
    for n in 1..=3 {
        // a ← d(a + Δβ) gives Var = Δ d²(1 − d^{2K}) / (1 − d²)
        let d2 = (-2.0 * basis.lambda(n) * delta).exp();
        let var = delta * d2 * (1.0 - d2.powi(steps as i32)) / (1.0 - d2);
        let sq: Vec<f64> = paths.iter().map(|p| p.coeff(n, steps).powi(2)).collect();
        let z = Estimate::from_samples(&sq).z_against(var);
        assert!(z <= 4.0, "mode {n}: z {z}");
    }
}

#[test]
fn field_variance_matches_sigma2() {
    let basis = EigenSystem::new(32, 0.5).unwrap();
    let grid = TimeGrid::uniform(0.5, 1).unwrap();
    for x in [0.3, 0.5] {
        let est = sample_stat(20_000, 0, |i| {
            let p = sample_path(&basis, Scheme::ExactOu, grid, 0.0, SEED, i).unwrap();
            FieldView::new(&p).value(1, x).powi(2)
        });
        let z = est.z_against(sigma2(0.5, x, 0.0, &basis).unwrap());
        assert!(z <= 4.0, "x {x}: z {z}");
    }
}

#[test]
fn stochastic_exponential_moments() {
    let basis = EigenSystem::new(2, 0.5).unwrap();
    let grid = TimeGrid::uniform(0.5, 16).unwrap();
    let f = ShiftField::single(1, Envelope::Constant { amp: 0.5 }, 0.5);
    let values: Vec<f64> = (0..20_000)
        .map(|i| stoch_exponential(&sample_path(&basis, Scheme::ExpEuler, grid, 0.0, SEED, i).unwrap(), &f).unwrap())
        .collect();
    assert!(values.iter().all(|&v| v > 0.0));
    let first = Estimate::from_samples(&values);
    assert!(first.z_against(1.0) <= 4.0, "mean {}", first.mean);
    // E[ℰ²] = exp(‖f‖²) with ‖f‖² = 0.25 · 0.5
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    let second = Estimate::from_samples(&sq);
    assert!(second.z_against(0.125f64.exp()) <= 4.0, "second moment {}", second.mean);
}

#[test]
fn zero_shift_estimators_coincide_with_the_plain_mean() {
    let basis = EigenSystem::new(8, 0.5).unwrap();
    let cfg = SamplerConfig {
        basis,
        scheme: Scheme::ExpEuler,
        grid: TimeGrid::uniform(0.5, 32).unwrap(),
        epsilon: 0.0,
        seed: SEED,
        stream_offset: 100,
    };
    let tanh = registry("tanh").unwrap();
    let functional = |v: &FieldView| tanh.phi(v.value(v.final_index(), 0.4));
    let zero = ShiftField::zero(0.5);
    let shifted = estimate_stransform(functional, &zero, 500, EstimatorMode::Shifted, &cfg).unwrap();
    let weighted = estimate_stransform(functional, &zero, 500, EstimatorMode::Weighted, &cfg).unwrap();
    assert_eq!(shifted, weighted);
    let plain = sample_stat(500, 100, |i| {
        let p = sample_path(&basis, Scheme::ExpEuler, cfg.grid, 0.0, SEED, i).unwrap();
        tanh.phi(FieldView::new(&p).value(32, 0.4))
    });
    assert_eq!(shifted.mean, plain.mean);
}

#[test]
fn shifted_and_weighted_recover_the_girsanov_mean() {
    let basis = EigenSystem::new(8, 0.5).unwrap();
    let cfg = SamplerConfig {
        basis,
        scheme: Scheme::ExpEuler,
        grid: TimeGrid::uniform(0.5, 256).unwrap(),
        epsilon: 0.0,
        seed: SEED,
        stream_offset: 0,
    };
    let f = ShiftField::single(1, Envelope::Constant { amp: 1.5 }, 0.5);
    let x = 0.37;
    let m = mean_bundle(0.5, x, &f, &basis).unwrap().m;
    let functional = |v: &FieldView| v.value(v.final_index(), x);
    for mode in [EstimatorMode::Shifted, EstimatorMode::Weighted] {
        let est = estimate_stransform(functional, &f, 4000, mode, &cfg).unwrap();
        assert!(est.z_against(m) <= 4.0, "{mode:?}: {} vs {m}", est.mean);
    }
}

#[test]
fn pathwise_ito_integral_is_centred() {
    let basis = EigenSystem::new(16, 0.5).unwrap();
    let grid = TimeGrid::uniform(0.25, 64).unwrap();
    let cos = registry("cosine").unwrap();
    let win = window("center_bump").unwrap();
    let est = sample_stat(1000, 0, |i| {
        let p = sample_path(&basis, Scheme::ExpEuler, grid, 0.01, SEED, i).unwrap();
        pathwise_ito_integral(&p, &cos, &win, 16).unwrap()
    });
    assert!(est.std_error > 0.0);
    assert!(est.z_against(0.0) <= 4.0, "mean {} se {}", est.mean, est.std_error);
}

#[test]
fn quadratic_identity_holds_in_mean() {
    let eps = 0.01;
    let basis = damped_basis(&EigenSystem::new(128, 0.5).unwrap(), eps, 1e-20).unwrap();
    let grid = TimeGrid::uniform(0.25, 256).unwrap();
    let win = window("center_bump").unwrap();
    let quad = registry("quadratic").unwrap();
    let eval = PathwiseEvaluator::new(&basis, eps, grid, &win, 32).unwrap();
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for i in 0..400 {
        let p = sample_path(&basis, Scheme::ExpEuler, grid, eps, SEED, i).unwrap();
        let b = eval.evaluate(&p, &quad).unwrap();
        lhs.push(b.lhs);
        rhs.push(b.lhs - b.residual_zambotti);
    }
    let (l, r) = (Estimate::from_samples(&lhs), Estimate::from_samples(&rhs));
    assert!(l.z_score(&r) <= 3.0, "lhs {} vs rhs {}", l.mean, r.mean);

    // E⟨u_T², l⟩ = ⟨σ²_ε(T), l⟩
    let (a, b) = win.support();
    let want = GaussLegendre::new(200)
        .unwrap()
        .integrate(a, b, |x| sigma2(0.25, x, eps, &basis).unwrap() * win.l(x));
    assert!(l.z_against(want) <= 4.0, "lhs mean {} vs {want}", l.mean);
}
