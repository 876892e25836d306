//! Suite orchestration: runs a named suite over the configured scenarios and
//! collects report rows plus auxiliary tables.

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Format, ScenarioConfig};
use crate::error::{Error, Result};
use crate::hida::{hida_norm_dxx, HidaNorm, MultiplierConvention};
use crate::paths::{
    estimate_stransform, estimate_stransform_batch, pathwise_convergence, ConvergenceStudy, EstimatorMode,
    PathwiseStudyConfig, SamplerConfig, Scheme, TimeGrid,
};
use crate::quadrature::{adaptive_integrate, GaussLegendre};
use crate::regularization::{
    divergence_fit, epsilon_convergence_table, mode_contribution, table_column, write_table_csv, DivergenceFit,
    Quantity,
};
use crate::report::{Meta, Report};
use crate::semigroup::{registry, semigroup_apply};
use crate::spectral::{
    counterterm, kernel, kernel_dxx, mean_bundle, sigma2, sigma2_rate, wick_correction, EigenSystem, KernelQuery,
};
use crate::stransform::{StEngine, TermBreakdown};
use crate::window::window;

pub const SUITES: [&str; 6] = [
    "kernel-selftest",
    "verify-ito",
    "verify-pathwise",
    "verify-zambotti",
    "renorm-study",
    "hida-norm",
];

/// Modes used for the stationary-variance check; the truncation tail is
/// about `1 / (κ π² N)`.
pub const STATIONARY_MODES: usize = 1 << 18;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURES: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RESOLUTION: i32 = 3;
pub const EXIT_GOLDEN_MISSING: i32 = 4;

/// Auxiliary file written next to the main report.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutput {
    pub suite: String,
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

impl SuiteOutput {
    pub fn exit_code(&self) -> i32 {
        if self.report.all_pass() {
            EXIT_OK
        } else {
            EXIT_FAILURES
        }
    }

    pub fn report_path(&self, dir: &Path, format: Format) -> PathBuf {
        let ext = match format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        dir.join(format!("{}.{ext}", self.suite))
    }

    /// Writes the report and every artifact into `dir`.
    pub fn write(&self, dir: &Path, format: Format) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = self.report_path(dir, format);
        self.report.write(&path, format)?;
        for a in &self.artifacts {
            std::fs::write(dir.join(&a.file_name), &a.contents)?;
        }
        Ok(path)
    }

    pub fn failure_summary(&self) -> String {
        self.report
            .failures()
            .iter()
            .map(|r| format!("FAIL {}/{}/{} = {:e}", r.suite, r.scenario, r.metric, r.value))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Exit status for an error surfaced by a suite.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownObservable(_) | Error::UnknownWindow(_) => EXIT_CONFIG,
        Error::GoldenMissing(_) => EXIT_GOLDEN_MISSING,
        e if e.is_resolution() => EXIT_RESOLUTION,
        _ => EXIT_FAILURES,
    }
}

pub fn run_suite(name: &str, cfg: &ScenarioConfig) -> Result<SuiteOutput> {
    cfg.validate()?;
    let mut artifacts = Vec::new();
    let report = match name {
        "kernel-selftest" => kernel_selftest(cfg)?,
        "verify-ito" => verify_ito(cfg, &mut artifacts)?,
        "verify-pathwise" => verify_pathwise(cfg, &mut artifacts)?,
        "verify-zambotti" => verify_zambotti(cfg, &mut artifacts)?,
        "renorm-study" => renorm_study(cfg, &mut artifacts)?,
        "hida-norm" => hida_suite(cfg, &mut artifacts)?,
        other => {
            return Err(Error::Config(format!(
                "unknown suite `{other}` (expected one of {})",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteOutput {
        suite: name.to_owned(),
        report,
        artifacts,
    })
}

fn json_artifact<T: Serialize>(file_name: &str, value: &T) -> Result<Artifact> {
    let mut contents = serde_json::to_vec_pretty(value)?;
    contents.push(b'\n');
    Ok(Artifact {
        file_name: file_name.to_owned(),
        contents,
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Uniform draws in `[lo, hi)` for randomized spot checks.
struct Uniform(ChaCha8Rng);

impl Uniform {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    fn draw(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }
}

// ---------------------------------------------------------------- kernel

fn kernel_selftest(cfg: &ScenarioConfig) -> Result<Report> {
    const SUITE: &str = "kernel-selftest";
    let basis = cfg.basis()?;
    let tol = &cfg.tolerances;
    let meta = Meta::new().with("n_modes", basis.n_modes()).with("kappa", basis.kappa());
    let mut report = Report::new();
    let rule = GaussLegendre::new(1024)?;
    let pts = [0.1, 0.37, 0.5, 0.81];
    let times = [0.01, 0.05, 0.2];

    let g = |t: f64, x: f64, y: f64| kernel(&KernelQuery::new(&basis, t, x, y));

    let mut ck: f64 = 0.0;
    let mut sym: f64 = 0.0;
    let mut bnd: f64 = 0.0;
    for &t in &times {
        for &s in &times {
            for &x in &pts {
                for &y in &pts {
                    let want = g(t + s, x, y)?;
                    let got = rule.integrate(0.0, 1.0, |z| g(t, x, z).unwrap() * g(s, z, y).unwrap());
                    ck = ck.max((got - want).abs() / want.abs().max(1.0));
                }
            }
        }
        for &x in &pts {
            for &y in &pts {
                sym = sym.max((g(t, x, y)? - g(t, y, x)?).abs());
            }
            bnd = bnd.max(g(t, 0.0, x)?.abs()).max(g(t, 1.0, x)?.abs());
        }
    }
    report.metric(SUITE, "chapman_kolmogorov", "max_rel_err", ck, ck <= tol.kernel, &meta);
    report.metric(SUITE, "symmetry", "max_abs_err", sym, sym <= tol.kernel, &meta);
    report.metric(SUITE, "boundary", "max_abs_value", bnd, bnd <= tol.kernel, &meta);

    let h = 1e-5;
    let mut heat: f64 = 0.0;
    for &t in &[0.05, 0.2, 0.5] {
        for &x in &pts {
            for &y in &pts {
                let dt = (g(t + h, x, y)? - g(t - h, x, y)?) / (2.0 * h);
                let lap = basis.kappa() * kernel_dxx(&KernelQuery::new(&basis, t, x, y))?;
                heat = heat.max((dt - lap).abs() / lap.abs().max(1.0));
            }
        }
    }
    report.metric(SUITE, "heat_equation", "max_rel_residual", heat, heat <= tol.heat_residual, &meta);

    // Closed forms against brute-force quadrature on randomized inputs.
    // With ε ≥ 1e-3 the kernel keeps fewer than 80 effective modes, which a
    // 256-point rule in y resolves.
    let slice = KernelSlice::new(&basis, 256)?;
    let mut rng = Uniform::new(cfg.mc.seed);
    let inputs: Vec<(f64, f64, f64)> = (0..20)
        .map(|_| (rng.draw(0.05, 1.0), rng.draw(0.05, 0.95), rng.draw(1e-3, 1e-2)))
        .collect();
    let errs: Vec<[f64; 3]> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, &(t, x, eps))| -> Result<[f64; 3]> {
            // Even inputs check ε = 0 through the kernel diagonal
            // `∫ g_s² dy = g_{2s}(x, x)` with `s = r²`; odd inputs integrate
            // the squared kernel over both variables.
            let eps_s = if i % 2 == 0 { 0.0 } else { eps };
            let oracle_s = if eps_s == 0.0 {
                adaptive_integrate(&|r: f64| 2.0 * r * g(2.0 * r * r, x, x).unwrap(), 0.0, t.sqrt(), 1e-14)
            } else {
                adaptive_integrate(&|s: f64| slice.integrate(x, s + eps_s, |g, _| g * g), 0.0, t, 1e-13)
            };
            let e_s = rel_err(sigma2(t, x, eps_s, &basis)?, oracle_s);
            let oracle_c = rule.integrate(0.0, 1.0, |y| g(eps, x, y).unwrap().powi(2));
            let e_c = rel_err(counterterm(x, eps, &basis)?, oracle_c);
            let oracle_w = adaptive_integrate(&|v: f64| slice.integrate(x, v + eps, |g, gxx| g * gxx), 0.0, t, 1e-13);
            let e_w = rel_err(wick_correction(t, x, eps, &basis)?, oracle_w);
            Ok([e_s, e_w, e_c])
        })
        .collect::<Result<_>>()?;
    for (j, name) in ["sigma2", "wick_correction", "counterterm"].iter().enumerate() {
        let worst = errs.iter().map(|e| e[j]).fold(0.0_f64, f64::max);
        report.metric(
            SUITE,
            &format!("closed_form/{name}"),
            "max_rel_err",
            worst,
            worst <= tol.closed_form,
            &meta.clone().with("inputs", inputs.len()),
        );
    }

    let wide = EigenSystem::new(STATIONARY_MODES, basis.kappa())?;
    let xs = [0.1, 0.3, 0.5, 0.77];
    let stat = xs
        .iter()
        .map(|&x| Ok((sigma2(5.0, x, 0.0, &wide)? - x * (1.0 - x)).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0_f64, f64::max);
    report.metric(
        SUITE,
        "stationary_variance",
        "max_abs_err",
        stat,
        stat <= tol.stationary_variance,
        &Meta::new().with("n_modes", STATIONARY_MODES).with("t", 5),
    );
    Ok(report)
}

/// `y ↦ (g_τ(x, y), ∂xx g_τ(x, y))` on a fixed Gauss–Legendre grid in `y`,
/// with the eigenfunctions tabulated once.
struct KernelSlice<'a> {
    basis: &'a EigenSystem,
    weights: Vec<f64>,
    /// `e_n(y_j)`, row per mode
    table: Vec<Vec<f64>>,
}

impl<'a> KernelSlice<'a> {
    fn new(basis: &'a EigenSystem, points: usize) -> Result<Self> {
        let rule = GaussLegendre::new(points)?;
        let (ys, weights): (Vec<f64>, Vec<f64>) = rule.on_interval(0.0, 1.0).unzip();
        let table = basis
            .modes()
            .map(|n| ys.iter().map(|&y| basis.e(n, y)).collect())
            .collect();
        Ok(Self { basis, weights, table })
    }

    fn integrate(&self, x: f64, tau: f64, h: impl Fn(f64, f64) -> f64) -> f64 {
        let q = self.weights.len();
        let mut g = vec![0.0; q];
        let mut gxx = vec![0.0; q];
        for (row, n) in self.table.iter().zip(self.basis.modes()) {
            let c = (-self.basis.lambda(n) * tau).exp() * self.basis.e(n, x);
            let cxx = -self.basis.mu(n) * c;
            for j in 0..q {
                g[j] += c * row[j];
                gxx[j] += cxx * row[j];
            }
        }
        (0..q).map(|j| self.weights[j] * h(g[j], gxx[j])).sum()
    }
}

// ---------------------------------------------------------------- verify-ito

#[derive(Debug, Clone, Serialize)]
struct ItoScenario {
    observable: String,
    window: String,
    shift: String,
    breakdown: TermBreakdown,
    refined: Option<TermBreakdown>,
}

fn verify_ito(cfg: &ScenarioConfig, artifacts: &mut Vec<Artifact>) -> Result<Report> {
    const SUITE: &str = "verify-ito";
    let basis = cfg.basis()?;
    let tol = &cfg.tolerances;
    let engine = StEngine::new(basis, cfg.quadrature)?;
    let refined_engine = StEngine::new(basis, cfg.quadrature.time_refined())?;
    let doubling_time = cfg.times[cfg.times.len() / 2];

    let mut blocks = Vec::new();
    for w in &cfg.windows {
        for &t in &cfg.times {
            blocks.push((w.clone(), t));
        }
    }
    let results: Vec<Vec<ItoScenario>> = blocks
        .par_iter()
        .map(|(wname, t)| -> Result<Vec<ItoScenario>> {
            let win = window(wname)?;
            let tables = engine.tables(0.0, *t, &win)?;
            let fine_tables = if *t == doubling_time {
                Some(refined_engine.tables(0.0, *t, &win)?)
            } else {
                None
            };
            let mut out = Vec::new();
            for oname in &cfg.observables {
                let obs = registry(oname)?;
                for spec in &cfg.shift_fields {
                    let f = cfg.shift(&spec.name)?;
                    let breakdown = engine.terms(&tables, &obs, &f)?;
                    let refined = match &fine_tables {
                        Some(ft) => Some(refined_engine.terms(ft, &obs, &f)?),
                        None => None,
                    };
                    out.push(ItoScenario {
                        observable: oname.clone(),
                        window: wname.clone(),
                        shift: spec.name.clone(),
                        breakdown,
                        refined,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut scenarios: Vec<ItoScenario> = results.into_iter().flatten().collect();
    scenarios.sort_by(|a, b| {
        (&a.observable, &a.window, &a.shift)
            .cmp(&(&b.observable, &b.window, &b.shift))
            .then(a.breakdown.t.total_cmp(&b.breakdown.t))
    });

    let mut report = Report::new();
    for s in &scenarios {
        let b = &s.breakdown;
        let key = format!("{}/{}/{}/t={}", s.observable, s.window, s.shift, b.t);
        let limit = if s.observable == "linear" { tol.ito_linear } else { tol.ito_nonlinear };
        let meta = Meta::new()
            .with("hermite_order", b.quadrature.hermite_order)
            .with("legendre_points", b.quadrature.legendre_points)
            .with("stieltjes_panels", b.quadrature.stieltjes_panels)
            .with("tolerance", limit);
        for (metric, v) in [
            ("lhs", b.lhs),
            ("ito_integral", b.ito_integral),
            ("wick_drift", b.wick_drift),
            ("ito_correction", b.ito_correction),
        ] {
            report.metric(SUITE, &key, metric, v, true, &meta);
        }
        let rel = b.relative_residual();
        report.metric(SUITE, &key, "relative_residual", rel, rel <= limit, &meta);
        if let Some(r) = &s.refined {
            let ok = r.residual.abs() <= b.residual.abs() + 1e-12 * b.scale;
            report.metric(
                SUITE,
                &key,
                "refined_relative_residual",
                r.relative_residual(),
                ok,
                &meta.clone().with("stieltjes_panels", r.quadrature.stieltjes_panels),
            );
        }
    }
    artifacts.push(json_artifact("verify-ito-breakdowns.json", &scenarios)?);
    Ok(report)
}

// ---------------------------------------------------------------- Monte Carlo

fn pathwise_study(cfg: &ScenarioConfig, observable: &str, stream_base: u64) -> Result<ConvergenceStudy> {
    let p = &cfg.pathwise;
    let finest_steps = (p.t * 2f64.powi(p.finest_log2 as i32)).round() as usize;
    let study_cfg = PathwiseStudyConfig {
        horizon: p.t,
        finest_steps,
        levels: (p.finest_log2 - p.coarsest_log2 + 1) as usize,
        epsilon: p.epsilon,
        n_paths: p.n_paths,
        seed: cfg.mc.seed,
        stream_offset: stream_base,
        space_points: p.space_points,
    };
    pathwise_convergence(&cfg.basis()?, &registry(observable)?, &window(&p.window)?, &study_cfg)
}

fn report_study(report: &mut Report, suite: &str, study: &ConvergenceStudy, wick: bool, cfg: &ScenarioConfig) {
    let tol = &cfg.tolerances;
    let form = if wick { "wick_form" } else { "zambotti_form" };
    let key = format!("{}/{form}", study.observable);
    let meta = Meta::new()
        .with("epsilon", study.epsilon)
        .with("n_paths", study.n_paths)
        .with("n_modes", study.n_modes);
    let rms: Vec<f64> = study
        .levels
        .iter()
        .map(|l| if wick { l.rms_wick } else { l.rms_zambotti })
        .collect();
    for (l, r) in study.levels.iter().zip(&rms) {
        report.metric(suite, &key, &format!("rms_residual/delta={}", l.delta), *r, true, &meta);
    }
    // levels run from fine to coarse
    let decays = rms.windows(2).all(|w| w[0] < w[1]);
    report.metric(suite, &key, "rms_decays", if decays { 1.0 } else { 0.0 }, decays, &meta);
    let slope = if wick { study.slope_wick } else { study.slope_zambotti };
    let [lo, hi] = tol.pathwise_slope;
    report.metric(
        suite,
        &key,
        "loglog_slope",
        slope,
        (lo..=hi).contains(&slope),
        &meta.clone().with("band", format!("[{lo},{hi}]")),
    );
}

fn verify_pathwise(cfg: &ScenarioConfig, artifacts: &mut Vec<Artifact>) -> Result<Report> {
    const SUITE: &str = "verify-pathwise";
    let tol = &cfg.tolerances;
    let basis = cfg.basis()?;
    let mc = &cfg.mc;
    let mut report = Report::new();

    // Shifted estimator against the deterministic S-transform.
    for (i, spot) in mc.spot_checks.iter().enumerate() {
        let obs = registry(&spot.observable)?;
        let f = cfg.shift(&spot.shift)?;
        let sampler = SamplerConfig {
            basis,
            scheme: Scheme::ExactOu,
            grid: TimeGrid::uniform(spot.t, 1)?,
            epsilon: 0.0,
            seed: mc.seed,
            stream_offset: (i as u64) << 32,
        };
        let x = spot.x;
        let est = estimate_stransform(
            |v| obs.phi(v.value(v.final_index(), x)),
            &f,
            mc.n_samples,
            EstimatorMode::Shifted,
            &sampler,
        )?;
        let oracle = semigroup_apply(&obs, 0, sigma2(spot.t, x, 0.0, &basis)?, mean_bundle(spot.t, x, &f, &basis)?.m)?;
        let z = est.z_against(oracle);
        let key = format!("spot/{}/{}/t={}/x={}", spot.observable, spot.shift, spot.t, x);
        let meta = Meta::new()
            .with("n", est.n)
            .with("scheme", "exact_ou")
            .with("n_modes", basis.n_modes());
        report.mc_metric(SUITE, &key, "shifted_estimate", est.mean, est.std_error, z <= tol.mc_sigmas, &meta);
        report.metric(SUITE, &key, "oracle", oracle, true, &meta);
        report.metric(SUITE, &key, "z_score", z, z <= tol.mc_sigmas, &meta);
    }

    // Shifted against weighted on shared exp_euler path sets.
    let small = EigenSystem::new(mc.n_modes, basis.kappa())?;
    let t_cmp = cfg.pathwise.t;
    let grid = TimeGrid::uniform(t_cmp, (t_cmp / mc.delta).round().max(1.0) as usize)?;
    let usable: Vec<_> = mc
        .spot_checks
        .iter()
        .filter(|s| cfg.shift(&s.shift).is_ok_and(|f| f.validate(&small).is_ok()))
        .collect();
    let mut shifts: Vec<&str> = usable.iter().map(|s| s.shift.as_str()).collect();
    shifts.sort_unstable();
    shifts.dedup();
    for (j, shift) in shifts.iter().enumerate() {
        let f = cfg.shift(shift)?;
        let checks: Vec<_> = usable.iter().filter(|s| s.shift == *shift).collect();
        let observables: Vec<_> = checks
            .iter()
            .map(|s| registry(&s.observable))
            .collect::<Result<_>>()?;
        let xs: Vec<f64> = checks.iter().map(|s| s.x).collect();
        let functionals = |v: &crate::paths::FieldView| -> Vec<f64> {
            let k = v.final_index();
            observables.iter().zip(&xs).map(|(o, &x)| o.phi(v.value(k, x))).collect()
        };
        let base = SamplerConfig {
            basis: small,
            scheme: Scheme::ExpEuler,
            grid,
            epsilon: 0.0,
            seed: mc.seed,
            stream_offset: (1u64 << 40) + ((2 * j as u64) << 32),
        };
        let weighted_cfg = SamplerConfig {
            stream_offset: base.stream_offset + (1u64 << 32),
            ..base
        };
        let shifted = estimate_stransform_batch(functionals, &f, mc.n_samples, EstimatorMode::Shifted, &base)?;
        let weighted =
            estimate_stransform_batch(functionals, &f, mc.n_samples, EstimatorMode::Weighted, &weighted_cfg)?;
        for ((c, s), w) in checks.iter().zip(&shifted).zip(&weighted) {
            let key = format!("compare/{}/{}/t={}/x={}", c.observable, shift, t_cmp, c.x);
            let meta = Meta::new()
                .with("n", s.n)
                .with("scheme", "exp_euler")
                .with("delta", mc.delta)
                .with("n_modes", small.n_modes());
            let z = s.z_score(w);
            report.mc_metric(SUITE, &key, "shifted_estimate", s.mean, s.std_error, true, &meta);
            report.mc_metric(SUITE, &key, "weighted_estimate", w.mean, w.std_error, true, &meta);
            report.metric(SUITE, &key, "z_score", z, z <= tol.mc_sigmas, &meta);
            report.metric(
                SUITE,
                &key,
                "shifted_to_weighted_variance",
                (s.spread() / w.spread()).powi(2),
                true,
                &meta,
            );
        }
    }

    let mut studies = Vec::new();
    for (i, name) in cfg.pathwise.observables.iter().enumerate() {
        let study = pathwise_study(cfg, name, (1u64 << 48) + ((i as u64) << 32))?;
        report_study(&mut report, SUITE, &study, true, cfg);
        studies.push(study);
    }
    artifacts.push(json_artifact("verify-pathwise-convergence.json", &studies)?);
    Ok(report)
}

fn verify_zambotti(cfg: &ScenarioConfig, artifacts: &mut Vec<Artifact>) -> Result<Report> {
    const SUITE: &str = "verify-zambotti";
    let tol = &cfg.tolerances;
    let mut report = Report::new();
    let mut studies = Vec::new();
    for (i, name) in cfg.pathwise.observables.iter().enumerate() {
        // same paths as verify-pathwise so both forms see identical noise
        let study = pathwise_study(cfg, name, (1u64 << 48) + ((i as u64) << 32))?;
        report_study(&mut report, SUITE, &study, false, cfg);
        let gap = study.levels.iter().map(|l| l.max_form_gap).fold(0.0_f64, f64::max);
        report.metric(
            SUITE,
            &format!("{name}/forms"),
            "max_relative_form_gap",
            gap,
            gap <= tol.form_agreement,
            &Meta::new().with("n_paths", study.n_paths),
        );
        studies.push(study);
    }
    artifacts.push(json_artifact("verify-zambotti-convergence.json", &studies)?);
    Ok(report)
}

// ---------------------------------------------------------------- renormalization

fn renorm_study(cfg: &ScenarioConfig, artifacts: &mut Vec<Artifact>) -> Result<Report> {
    const SUITE: &str = "renorm-study";
    let tol = &cfg.tolerances;
    let r = &cfg.renorm;
    let big = EigenSystem::new(r.n_modes, cfg.basis.kappa)?;
    let ladder = &cfg.epsilon_ladder;
    let mut report = Report::new();

    let fits: Vec<DivergenceFit> = Quantity::ALL
        .iter()
        .map(|&q| {
            let x = if q == Quantity::RenormalizedMean { r.x_renormalized } else { r.x_divergent };
            divergence_fit(q, r.t, x, ladder, &big)
        })
        .collect::<Result<_>>()?;
    for fit in &fits {
        let key = format!("{}/t={}/x={}", fit.quantity.name(), fit.t, fit.x);
        let meta = Meta::new().with("n_modes", fit.n_modes).with("r_squared", fit.r_squared);
        for (e, v) in fit.ladder.iter().zip(&fit.values) {
            report.metric(SUITE, &key, &format!("value/eps={e}"), *v, true, &meta);
        }
        match fit.quantity {
            Quantity::RenormalizedMean => {
                let diffs = fit.cauchy_diffs();
                let shrinking = diffs.windows(2).all(|w| w[1] < w[0]);
                report.metric(SUITE, &key, "cauchy_diffs_decrease", if shrinking { 1.0 } else { 0.0 }, shrinking, &meta);
                report.metric(SUITE, &key, "slope", fit.slope, fit.slope >= tol.renormalized_slope_min, &meta);
            }
            _ => {
                let ok = (fit.slope - tol.divergence_slope).abs() <= tol.divergence_band;
                report.metric(SUITE, &key, "slope", fit.slope, ok, &meta);
            }
        }
    }

    // Invariants over the ladder.
    let kappa = big.kappa();
    let (mut leibniz, mut cancel): (f64, f64) = (0.0, 0.0);
    let mut monotone = true;
    let mut prev = 0.0;
    for &eps in ladder {
        for &x in &[r.x_divergent, r.x_renormalized] {
            let c = counterterm(x, eps, &big)?;
            let lhs = sigma2_rate(r.t, x, eps, &big)?;
            let rhs = c + 2.0 * kappa * wick_correction(r.t, x, eps, &big)?;
            leibniz = leibniz.max((lhs - rhs).abs() / c);
        }
        let c = counterterm(r.x_divergent, eps, &big)?;
        monotone &= c > prev;
        prev = c;
        if kappa == 0.5 {
            let x = r.x_renormalized;
            for n in big.modes() {
                let (g, c) = mode_contribution(n, r.t, x, eps, &big);
                let lam = big.lambda(n);
                let pi_nx = std::f64::consts::PI * n as f64 * x;
                let want = (-2.0 * lam * eps).exp()
                    * (2.0 * (2.0 * pi_nx).cos() - 2.0 * (-2.0 * lam * r.t).exp() * pi_nx.cos().powi(2));
                cancel = cancel.max((g - c - want).abs());
            }
        }
    }
    let meta = Meta::new().with("n_modes", big.n_modes());
    report.metric(SUITE, "invariants", "leibniz_max_rel_err", leibniz, leibniz <= 1e-12, &meta);
    report.metric(SUITE, "invariants", "counterterm_increases_as_eps_decreases", if monotone { 1.0 } else { 0.0 }, monotone, &meta);
    if kappa == 0.5 {
        report.metric(SUITE, "invariants", "per_mode_cancellation_max_err", cancel, cancel <= 1e-14, &meta);
    }

    // ε-convergence of the S-transform terms.
    let basis = cfg.basis()?;
    let engine = StEngine::new(basis, cfg.quadrature)?;
    let obs = registry(&r.table_observable)?;
    let win = window(&r.table_window)?;
    let f = cfg.shift(&r.table_shift)?;
    let rows = epsilon_convergence_table(&engine, &obs, &win, &f, r.t, &r.table_ladder)?;
    let key = format!("table/{}/{}/{}/t={}", r.table_observable, r.table_window, r.table_shift, r.t);
    let tmeta = Meta::new().with("n_modes", basis.n_modes());
    let lhs = table_column(&rows, "lhs");
    let diffs: Vec<f64> = lhs.iter().filter_map(|r| r.cauchy_diff).collect();
    let shrinking = diffs.windows(2).all(|w| w[1] < w[0]);
    let last = *diffs.last().unwrap_or(&f64::NAN);
    report.metric(SUITE, &key, "lhs_cauchy_diffs_decrease", if shrinking { 1.0 } else { 0.0 }, shrinking, &tmeta);
    report.metric(SUITE, &key, "lhs_final_cauchy_diff", last, last <= tol.table_final_diff, &tmeta);
    let zero = engine.residual(r.t, &obs, &win, &f)?;
    let corr = table_column(&rows, "ito_correction");
    let gap = (corr.last().map_or(f64::NAN, |r| r.value) - zero.ito_correction).abs();
    report.metric(SUITE, &key, "ito_correction_gap_to_eps0", gap, gap <= tol.table_final_diff, &tmeta);

    let mut csv_buf = Vec::new();
    write_table_csv(&rows, &mut csv_buf)?;
    artifacts.push(Artifact {
        file_name: "renorm-epsilon-table.csv".into(),
        contents: csv_buf,
    });
    artifacts.push(json_artifact("renorm-divergence-fits.json", &fits)?);
    Ok(report)
}

// ---------------------------------------------------------------- Hida norm

fn hida_suite(cfg: &ScenarioConfig, artifacts: &mut Vec<Artifact>) -> Result<Report> {
    const SUITE: &str = "hida-norm";
    let tol = &cfg.tolerances;
    let h = &cfg.hida;
    let basis = EigenSystem::new(h.n_modes, cfg.basis.kappa)?;
    let wide = EigenSystem::new(2 * h.n_modes, cfg.basis.kappa)?;
    let conv = h.convention;
    let parseval = MultiplierConvention::constant_one();
    let mut report = Report::new();
    let mut records: Vec<HidaNorm> = Vec::new();
    for &[t, x] in &h.points {
        let base = hida_norm_dxx(t, x, cfg.horizon, &conv, &basis, h.resolution)?;
        let more_modes = hida_norm_dxx(t, x, cfg.horizon, &conv, &wide, h.resolution)?;
        let more_freq = hida_norm_dxx(t, x, cfg.horizon, &conv, &basis, 2 * h.resolution)?;
        let flat = hida_norm_dxx(t, x, cfg.horizon, &parseval, &basis, h.resolution)?;
        let key = format!("t={t}/x={x}");
        let meta = Meta::new()
            .with("convention", conv.label())
            .with("n_modes", basis.n_modes())
            .with("resolution", h.resolution);
        report.metric(SUITE, &key, "norm", base.norm, base.norm.is_finite() && base.norm >= 0.0, &meta);
        report.metric(SUITE, &key, "upper_bound", base.upper_bound, true, &meta);
        report.metric(SUITE, &key, "ratio", base.ratio, base.ratio <= 1.0 + tol.hida_ratio_slack, &meta);
        let dn = rel_err(more_modes.norm, base.norm);
        report.metric(SUITE, &key, "rel_change_doubling_modes", dn, dn <= tol.hida_stability, &meta);
        let grows = more_modes.norm >= base.norm;
        report.metric(SUITE, &key, "nondecreasing_in_modes", if grows { 1.0 } else { 0.0 }, grows, &meta);
        let dr = rel_err(more_freq.norm, base.norm);
        report.metric(SUITE, &key, "rel_change_doubling_resolution", dr, dr <= tol.hida_stability, &meta);
        let pe = (flat.ratio - 1.0).abs();
        report.metric(
            SUITE,
            &key,
            "parseval_ratio_err",
            pe,
            pe <= tol.parseval,
            &meta.clone().with("convention", parseval.label()),
        );
        records.extend([base, more_modes, more_freq, flat]);
    }
    artifacts.push(json_artifact("hida-norms.json", &records)?);
    Ok(report)
}
