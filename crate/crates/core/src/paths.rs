//! Spectral mode trajectories of the solution field and the Monte Carlo
//! machinery built on them.
//!
//! The field is `u^ε_t(x) = Σ_n e^{-λ_n ε} a_n(t) e_n(x)` where each `a_n`
//! is an Ornstein–Uhlenbeck process driven by `β_n = ⟨W, e_n⟩`. Two samplers:
//!
//! * `exact_ou` draws the exact OU transition; it is exact in law at the grid
//!   points but its noise cannot be written through Brownian increments.
//! * `exp_euler` keeps the increments `Δβ` and advances
//!   `a ← e^{-λΔ}(a + Δβ)`, so Itô sums and stochastic exponentials can be
//!   formed from the same noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit_interval, Error, Result};
use crate::fit::{loglog_fit, LogLogFit};
use crate::quadrature::{pairwise_sum, GaussLegendre};
use crate::rng::NormalStream;
use crate::semigroup::ObservableTriple;
use crate::spectral::{duhamel, EigenSystem, ShiftField};
use crate::window::SpaceWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExactOu,
    ExpEuler,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::ExactOu => "exact_ou",
            Scheme::ExpEuler => "exp_euler",
        }
    }
}

/// Uniform grid `t_k = k Δ`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    delta: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::NonUniformGrid(format!(
                "need positive horizon and steps, got T={horizon}, K={steps}"
            )));
        }
        Ok(Self {
            delta: horizon / steps as f64,
            steps,
        })
    }

    /// Validates an explicit list of times starting at zero.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::NonUniformGrid("grid must start at 0 with at least one step".into()));
        }
        let steps = times.len() - 1;
        let grid = Self::uniform(times[steps], steps)?;
        for (k, &t) in times.iter().enumerate() {
            if (t - grid.time(k)).abs() > 1e-12 * grid.horizon() {
                return Err(Error::NonUniformGrid(format!("t_{k} = {t}, expected {}", grid.time(k))));
            }
        }
        Ok(grid)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    Dx,
    Dxx,
}

/// A sampled trajectory of mode amplitudes.
#[derive(Debug, Clone)]
pub struct ModePath {
    scheme: Scheme,
    epsilon: f64,
    basis: EigenSystem,
    grid: TimeGrid,
    /// `coeffs[(n-1)(K+1) + k] = a_n(t_k)`
    coeffs: Vec<f64>,
    /// `incs[(n-1)K + k] = Δβ_n` over `[t_k, t_{k+1}]`
    incs: Option<Vec<f64>>,
    seed: u64,
    stream: u64,
}

pub fn sample_path(
    basis: &EigenSystem,
    scheme: Scheme,
    grid: TimeGrid,
    epsilon: f64,
    seed: u64,
    stream: u64,
) -> Result<ModePath> {
    if !(epsilon >= 0.0) {
        return Err(Error::domain("epsilon", epsilon, "[0, inf)"));
    }
    let k_steps = grid.steps();
    let delta = grid.delta();
    let n_modes = basis.n_modes();
    let mut rng = NormalStream::new(seed, stream);
    let mut coeffs = vec![0.0; n_modes * (k_steps + 1)];
    let mut draws = vec![0.0; k_steps];
    let mut incs = match scheme {
        Scheme::ExpEuler => Some(vec![0.0; n_modes * k_steps]),
        Scheme::ExactOu => None,
    };
    for (idx, n) in basis.modes().enumerate() {
        rng.fill_mode(n, 0, &mut draws);
        let lam = basis.lambda(n);
        let decay = (-lam * delta).exp();
        let a = &mut coeffs[idx * (k_steps + 1)..(idx + 1) * (k_steps + 1)];
        match scheme {
            Scheme::ExactOu => {
                let sd = (-(-2.0 * lam * delta).exp_m1() / (2.0 * lam)).sqrt();
                for k in 0..k_steps {
                    a[k + 1] = decay * a[k] + sd * draws[k];
                }
            }
            Scheme::ExpEuler => {
                let inc = &mut incs.as_mut().expect("exp_euler keeps increments")
                    [idx * k_steps..(idx + 1) * k_steps];
                let sd = delta.sqrt();
                for k in 0..k_steps {
                    inc[k] = sd * draws[k];
                    a[k + 1] = decay * (a[k] + inc[k]);
                }
            }
        }
    }
    Ok(ModePath {
        scheme,
        epsilon,
        basis: *basis,
        grid,
        coeffs,
        incs,
        seed,
        stream,
    })
}

impl ModePath {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn basis(&self) -> &EigenSystem {
        &self.basis
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn coeff(&self, n: usize, k: usize) -> f64 {
        self.coeffs[(n - 1) * (self.grid.steps() + 1) + k]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Trajectory of mode `n` over the grid.
    pub fn mode_series(&self, n: usize) -> &[f64] {
        let len = self.grid.steps() + 1;
        &self.coeffs[(n - 1) * len..n * len]
    }

    pub fn increments(&self) -> Result<&[f64]> {
        self.incs
            .as_deref()
            .ok_or(Error::MissingIncrements(self.scheme.name()))
    }

    pub fn increment(&self, n: usize, k: usize) -> Result<f64> {
        Ok(self.increments()?[(n - 1) * self.grid.steps() + k])
    }

    /// The same Brownian path on a grid `factor` times coarser, with the
    /// recurrence re-run on the summed increments.
    pub fn coarsened(&self, factor: usize) -> Result<ModePath> {
        let incs = self.increments()?;
        if factor == 0 || !self.grid.steps().is_multiple_of(factor) {
            return Err(Error::NonUniformGrid(format!(
                "cannot coarsen {} steps by {factor}",
                self.grid.steps()
            )));
        }
        let fine_steps = self.grid.steps();
        let steps = fine_steps / factor;
        let grid = TimeGrid::uniform(self.grid.horizon(), steps)?;
        let n_modes = self.basis.n_modes();
        let mut coeffs = vec![0.0; n_modes * (steps + 1)];
        let mut coarse_incs = vec![0.0; n_modes * steps];
        for (idx, n) in self.basis.modes().enumerate() {
            let decay = (-self.basis.lambda(n) * grid.delta()).exp();
            let fine = &incs[idx * fine_steps..(idx + 1) * fine_steps];
            let inc = &mut coarse_incs[idx * steps..(idx + 1) * steps];
            let a = &mut coeffs[idx * (steps + 1)..(idx + 1) * (steps + 1)];
            for k in 0..steps {
                inc[k] = fine[k * factor..(k + 1) * factor].iter().sum();
                a[k + 1] = decay * (a[k] + inc[k]);
            }
        }
        Ok(ModePath {
            scheme: Scheme::ExpEuler,
            epsilon: self.epsilon,
            basis: self.basis,
            grid,
            coeffs,
            incs: Some(coarse_incs),
            seed: self.seed,
            stream: self.stream,
        })
    }
}

/// `D u^ε_{t_k}(x)` with `D ∈ {1, ∂x, ∂xx}`.
pub fn field(path: &ModePath, k: usize, x: f64, deriv: Deriv) -> Result<f64> {
    check_unit_interval("x", x)?;
    if k > path.grid.steps() {
        return Err(Error::domain("k", k as f64, "0..=K"));
    }
    let b = &path.basis;
    Ok(b.modes()
        .map(|n| {
            let damp = (-b.lambda(n) * path.epsilon).exp();
            let e = match deriv {
                Deriv::Value => b.e(n, x),
                Deriv::Dx => b.e_dx(n, x),
                Deriv::Dxx => b.e_dxx(n, x),
            };
            damp * path.coeff(n, k) * e
        })
        .sum())
}

/// Discrete stochastic exponential of `f` against the path's increments:
/// `exp(Σ f_n(t_k) Δβ_n,k − ½ Σ f_n(t_k)² Δ)`.
pub fn stoch_exponential(path: &ModePath, f: &ShiftField) -> Result<f64> {
    let incs = path.increments()?;
    f.validate(&path.basis)?;
    let steps = path.grid.steps();
    let delta = path.grid.delta();
    let mut exponent = 0.0;
    for n in f.distinct_modes() {
        let row = &incs[(n - 1) * steps..n * steps];
        for (k, inc) in row.iter().enumerate() {
            let fk = f.mode(n, path.grid.time(k));
            exponent += fk * inc - 0.5 * fk * fk * delta;
        }
    }
    Ok(exponent.exp())
}

/// Deterministic Girsanov shift `m^ε(t_k, ·)` tabulated on a grid.
#[derive(Debug, Clone)]
pub struct ShiftTable {
    /// per grid index: `(n, e^{-λε} I_n(t_k))`
    rows: Vec<Vec<(usize, f64)>>,
}

impl ShiftTable {
    pub fn new(f: &ShiftField, basis: &EigenSystem, grid: TimeGrid, epsilon: f64) -> Result<Self> {
        f.validate(basis)?;
        if grid.horizon() > f.horizon * (1.0 + 1e-12) {
            return Err(Error::Horizon {
                t: grid.horizon(),
                horizon: f.horizon,
            });
        }
        let ns = f.distinct_modes();
        let rows = (0..=grid.steps())
            .map(|k| {
                let t = grid.time(k);
                ns.iter()
                    .map(|&n| {
                        let lam = basis.lambda(n);
                        (n, (-lam * epsilon).exp() * duhamel(lam, t, |s| f.mode(n, s)))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { rows })
    }
}

/// Read access to a (possibly shifted) field.
#[derive(Debug, Clone, Copy)]
pub struct FieldView<'a> {
    pub path: &'a ModePath,
    shift: Option<&'a ShiftTable>,
}

impl<'a> FieldView<'a> {
    pub fn new(path: &'a ModePath) -> Self {
        Self { path, shift: None }
    }

    pub fn shifted(path: &'a ModePath, shift: &'a ShiftTable) -> Self {
        Self {
            path,
            shift: Some(shift),
        }
    }

    pub fn eval(&self, k: usize, x: f64, deriv: Deriv) -> f64 {
        let b = &self.path.basis;
        let mut v = field(self.path, k, x, deriv).expect("view evaluated inside its domain");
        if let Some(shift) = self.shift {
            for &(n, m_n) in &shift.rows[k] {
                v += m_n
                    * match deriv {
                        Deriv::Value => b.e(n, x),
                        Deriv::Dx => b.e_dx(n, x),
                        Deriv::Dxx => b.e_dxx(n, x),
                    };
            }
        }
        v
    }

    pub fn value(&self, k: usize, x: f64) -> f64 {
        self.eval(k, x, Deriv::Value)
    }

    pub fn final_index(&self) -> usize {
        self.path.grid.steps()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// `E[Φ(u + m)]`
    Shifted,
    /// `E[Φ(u) ℰ_T(f)]`
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub basis: EigenSystem,
    pub scheme: Scheme,
    pub grid: TimeGrid,
    pub epsilon: f64,
    pub seed: u64,
    /// Sample `i` is drawn from stream `stream_offset + i`.
    pub stream_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = pairwise_sum(values) / n as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Sample standard deviation.
    pub fn spread(&self) -> f64 {
        self.std_error * (self.n as f64).sqrt()
    }

    /// `|a - b| / sqrt(se_a² + se_b²)`.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = self.std_error.hypot(other.std_error);
        if se == 0.0 {
            if self.mean == other.mean { 0.0 } else { f64::INFINITY }
        } else {
            (self.mean - other.mean).abs() / se
        }
    }

    /// `|mean - target| / se`.
    pub fn z_against(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == target { 0.0 } else { f64::INFINITY }
        } else {
            (self.mean - target).abs() / self.std_error
        }
    }
}

/// Monte Carlo estimate of the S-transform `E[Φ(u) ℰ_T(f)]` of a path
/// functional, either through the Girsanov shift or through explicit
/// exponential weights.
pub fn estimate_stransform<F>(
    functional: F,
    f: &ShiftField,
    n_samples: usize,
    mode: EstimatorMode,
    cfg: &SamplerConfig,
) -> Result<Estimate>
where
    F: Fn(&FieldView) -> f64 + Sync,
{
    let mut out = estimate_stransform_batch(|v| vec![functional(v)], f, n_samples, mode, cfg)?;
    Ok(out.remove(0))
}

/// Like [`estimate_stransform`] for several functionals evaluated on the
/// same sample of paths.
pub fn estimate_stransform_batch<F>(
    functionals: F,
    f: &ShiftField,
    n_samples: usize,
    mode: EstimatorMode,
    cfg: &SamplerConfig,
) -> Result<Vec<Estimate>>
where
    F: Fn(&FieldView) -> Vec<f64> + Sync,
{
    if n_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    if mode == EstimatorMode::Weighted && cfg.scheme != Scheme::ExpEuler {
        return Err(Error::MissingIncrements(cfg.scheme.name()));
    }
    let shift = match mode {
        EstimatorMode::Shifted => Some(ShiftTable::new(f, &cfg.basis, cfg.grid, cfg.epsilon)?),
        EstimatorMode::Weighted => {
            f.validate(&cfg.basis)?;
            None
        }
    };
    let samples: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let path = sample_path(
                &cfg.basis,
                cfg.scheme,
                cfg.grid,
                cfg.epsilon,
                cfg.seed,
                cfg.stream_offset.wrapping_add(i),
            )?;
            Ok(match &shift {
                Some(table) => functionals(&FieldView::shifted(&path, table)),
                None => {
                    let w = stoch_exponential(&path, f)?;
                    functionals(&FieldView::new(&path)).into_iter().map(|v| v * w).collect()
                }
            })
        })
        .collect::<Result<_>>()?;
    let width = samples[0].len();
    if samples.iter().any(|s| s.len() != width) {
        return Err(Error::ShapeMismatch("functional returned a varying number of values".into()));
    }
    Ok((0..width)
        .map(|j| {
            let column: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            Estimate::from_samples(&column)
        })
        .collect())
}

/// Spatial Gauss–Legendre nodes on a window's support with `l`, `l''`.
#[derive(Debug, Clone)]
struct SpaceNodes {
    x: Vec<f64>,
    w: Vec<f64>,
    l: Vec<f64>,
    l2: Vec<f64>,
}

impl SpaceNodes {
    fn new(window: &SpaceWindow, points: usize) -> Result<Self> {
        let rule = GaussLegendre::new(points)?;
        let (a, b) = window.support();
        let (x, w): (Vec<f64>, Vec<f64>) = rule.on_interval(a, b).unzip();
        let l = x.iter().map(|&x| window.l(x)).collect();
        let l2 = x.iter().map(|&x| window.l2(x)).collect();
        Ok(Self { x, w, l, l2 })
    }
}

/// `Σ_k Σ_n ⟨φ'(u_{t_k}) l, e^{-λ_n ε} e_n⟩ Δβ_n,k`: left-point Itô sum
/// against the noise that drives `u^ε` (for `ε = 0`, plain `dW`).
pub fn pathwise_ito_integral(
    path: &ModePath,
    obs: &ObservableTriple,
    window: &SpaceWindow,
    space_points: usize,
) -> Result<f64> {
    let incs = path.increments()?;
    let nodes = SpaceNodes::new(window, space_points)?;
    let b = &path.basis;
    let steps = path.grid.steps();
    let q = nodes.x.len();
    let damp: Vec<f64> = b.modes().map(|n| (-b.lambda(n) * path.epsilon).exp()).collect();
    let table: Vec<Vec<f64>> = b
        .modes()
        .enumerate()
        .map(|(idx, n)| nodes.x.iter().map(|&x| damp[idx] * b.e(n, x)).collect())
        .collect();
    let mut u = vec![0.0; q];
    let mut g = vec![0.0; q];
    let mut total = 0.0;
    for k in 0..steps {
        u.fill(0.0);
        for (idx, n) in b.modes().enumerate() {
            let a = path.coeff(n, k);
            if a != 0.0 {
                for (ui, ei) in u.iter_mut().zip(&table[idx]) {
                    *ui += a * ei;
                }
            }
        }
        for i in 0..q {
            g[i] = nodes.w[i] * nodes.l[i] * obs.phi1(u[i]);
        }
        for (idx, _) in b.modes().enumerate() {
            let proj: f64 = g.iter().zip(&table[idx]).map(|(a, b)| a * b).sum();
            total += proj * incs[idx * steps + k];
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityForm {
    /// Itô integral + κ⟨φ'⋄∂xx u⟩ + ½⟨φ'' dσ²_ε⟩
    WickForm,
    /// Itô integral − κ⟨φ''((∂x u)² − c_ε/2κ)⟩ + κ⟨φ(u), l''⟩
    ZambottiForm,
}

/// Every term of both pathwise forms on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathwiseBreakdown {
    /// `⟨φ(u_T) − φ(u_0), l⟩`
    pub lhs: f64,
    pub ito_integral: f64,
    pub wick_drift: f64,
    pub ito_correction: f64,
    pub renormalized_gradient: f64,
    pub laplacian: f64,
    pub residual_wick: f64,
    pub residual_zambotti: f64,
    pub scale: f64,
}

impl PathwiseBreakdown {
    pub fn residual(&self, form: IdentityForm) -> f64 {
        match form {
            IdentityForm::WickForm => self.residual_wick,
            IdentityForm::ZambottiForm => self.residual_zambotti,
        }
    }
}

/// Deterministic tables for pathwise identity checks on one grid.
#[derive(Debug, Clone)]
pub struct PathwiseEvaluator {
    basis: EigenSystem,
    epsilon: f64,
    grid: TimeGrid,
    nodes: SpaceNodes,
    /// per mode: damped `e_n`, `e_n'`, `e_n''` at the nodes
    e: Vec<Vec<f64>>,
    e_dx: Vec<Vec<f64>>,
    e_dxx: Vec<Vec<f64>>,
    /// `E[u ∂xx u](t_k, x_i)` and `∂s σ²_ε(t_k, x_i)`, row-major in `k`
    wick: Vec<f64>,
    rate: Vec<f64>,
    counter: Vec<f64>,
}

impl PathwiseEvaluator {
    pub fn new(basis: &EigenSystem, epsilon: f64, grid: TimeGrid, window: &SpaceWindow, space_points: usize) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::EpsilonRequired(epsilon));
        }
        let nodes = SpaceNodes::new(window, space_points)?;
        let q = nodes.x.len();
        let damp: Vec<f64> = basis.modes().map(|n| (-basis.lambda(n) * epsilon).exp()).collect();
        let tab = |g: &dyn Fn(usize, f64) -> f64| -> Vec<Vec<f64>> {
            basis
                .modes()
                .enumerate()
                .map(|(idx, n)| nodes.x.iter().map(|&x| damp[idx] * g(n, x)).collect())
                .collect()
        };
        let e = tab(&|n, x| basis.e(n, x));
        let e_dx = tab(&|n, x| basis.e_dx(n, x));
        let e_dxx = tab(&|n, x| basis.e_dxx(n, x));
        let esq: Vec<Vec<f64>> = basis
            .modes()
            .map(|n| nodes.x.iter().map(|&x| basis.e(n, x).powi(2)).collect())
            .collect();
        let mut wick = vec![0.0; (grid.steps() + 1) * q];
        let mut rate = vec![0.0; (grid.steps() + 1) * q];
        for k in 0..=grid.steps() {
            let s = grid.time(k);
            for (idx, n) in basis.modes().enumerate() {
                let lam = basis.lambda(n);
                let d2 = (-2.0 * lam * epsilon).exp();
                let grow = -(-2.0 * lam * s).exp_m1();
                let w_coeff = -basis.mu(n) * d2 * grow / (2.0 * lam);
                let r_coeff = d2 * (-2.0 * lam * s).exp();
                for i in 0..q {
                    wick[k * q + i] += w_coeff * esq[idx][i];
                    rate[k * q + i] += r_coeff * esq[idx][i];
                }
            }
        }
        let counter = rate[..q].to_vec();
        Ok(Self {
            basis: *basis,
            epsilon,
            grid,
            nodes,
            e,
            e_dx,
            e_dxx,
            wick,
            rate,
            counter,
        })
    }

    pub fn evaluate(&self, path: &ModePath, obs: &ObservableTriple) -> Result<PathwiseBreakdown> {
        if path.grid != self.grid || path.basis != self.basis || path.epsilon != self.epsilon {
            return Err(Error::Config("path does not match the evaluator's grid, basis or epsilon".into()));
        }
        let incs = path.increments()?;
        let kappa = self.basis.kappa();
        let steps = self.grid.steps();
        let delta = self.grid.delta();
        let q = self.nodes.x.len();
        let (w, l, l2) = (&self.nodes.w, &self.nodes.l, &self.nodes.l2);
        let mut u = vec![0.0; q];
        let mut ux = vec![0.0; q];
        let mut uxx = vec![0.0; q];
        let mut g = vec![0.0; q];

        let fill = |k: usize, u: &mut [f64], ux: &mut [f64], uxx: &mut [f64]| {
            u.fill(0.0);
            ux.fill(0.0);
            uxx.fill(0.0);
            for (idx, n) in self.basis.modes().enumerate() {
                let a = path.coeff(n, k);
                if a == 0.0 {
                    continue;
                }
                for i in 0..q {
                    u[i] += a * self.e[idx][i];
                    ux[i] += a * self.e_dx[idx][i];
                    uxx[i] += a * self.e_dxx[idx][i];
                }
            }
        };

        let (mut ito, mut wick_sum, mut corr_sum, mut grad_sum, mut lap_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..steps {
            fill(k, &mut u, &mut ux, &mut uxx);
            let wick_k = &self.wick[k * q..(k + 1) * q];
            let rate_k = &self.rate[k * q..(k + 1) * q];
            let (mut wk, mut ck, mut gk, mut lk) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..q {
                let [p0, p1, p2] = obs.eval3(u[i]);
                let wl = w[i] * l[i];
                g[i] = wl * p1;
                wk += wl * (p1 * uxx[i] - p2 * wick_k[i]);
                ck += wl * p2 * rate_k[i];
                gk += wl * p2 * (ux[i] * ux[i] - self.counter[i] / (2.0 * kappa));
                lk += w[i] * p0 * l2[i];
            }
            for idx in 0..self.basis.n_modes() {
                let proj: f64 = g.iter().zip(&self.e[idx]).map(|(a, b)| a * b).sum();
                ito += proj * incs[idx * steps + k];
            }
            wick_sum += wk;
            corr_sum += ck;
            grad_sum += gk;
            lap_sum += lk;
        }
        fill(steps, &mut u, &mut ux, &mut uxx);
        let phi0 = obs.phi(0.0);
        let lhs: f64 = (0..q).map(|i| w[i] * l[i] * (obs.phi(u[i]) - phi0)).sum();

        let wick_drift = kappa * delta * wick_sum;
        let ito_correction = 0.5 * delta * corr_sum;
        let renormalized_gradient = -kappa * delta * grad_sum;
        let laplacian = kappa * delta * lap_sum;
        let residual_wick = lhs - (ito + wick_drift + ito_correction);
        let residual_zambotti = lhs - (ito + renormalized_gradient + laplacian);
        let scale = [lhs, ito, wick_drift, ito_correction, renormalized_gradient, laplacian]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(PathwiseBreakdown {
            lhs,
            ito_integral: ito,
            wick_drift,
            ito_correction,
            renormalized_gradient,
            laplacian,
            residual_wick,
            residual_zambotti,
            scale,
        })
    }
}

/// LHS − RHS of the chosen pathwise form on one `exp_euler` path with `ε > 0`.
pub fn pathwise_identity_residual(
    path: &ModePath,
    obs: &ObservableTriple,
    window: &SpaceWindow,
    form: IdentityForm,
    space_points: usize,
) -> Result<f64> {
    let eval = PathwiseEvaluator::new(&path.basis, path.epsilon, path.grid, window, space_points)?;
    Ok(eval.evaluate(path, obs)?.residual(form))
}

/// Smallest basis whose dropped modes are damped below `tol` by `e^{-λε}`.
pub fn damped_basis(basis: &EigenSystem, epsilon: f64, tol: f64) -> Result<EigenSystem> {
    if !(epsilon > 0.0) {
        return Ok(*basis);
    }
    let needed = basis
        .modes()
        .find(|&n| (-basis.lambda(n) * epsilon).exp() < tol)
        .map(|n| n - 1)
        .unwrap_or(basis.n_modes())
        .max(1);
    EigenSystem::new(needed, basis.kappa())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub delta: f64,
    pub rms_wick: f64,
    pub rms_zambotti: f64,
    /// max over paths of `|residual_wick − residual_zambotti| / scale`
    pub max_form_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub observable: String,
    pub epsilon: f64,
    pub n_paths: usize,
    pub n_modes: usize,
    pub levels: Vec<ConvergenceLevel>,
    pub slope_wick: f64,
    pub slope_zambotti: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathwiseStudyConfig {
    pub horizon: f64,
    /// Steps of the finest grid over `[0, horizon]`.
    pub finest_steps: usize,
    pub levels: usize,
    pub epsilon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub stream_offset: u64,
    pub space_points: usize,
}

/// RMS of both pathwise residuals over `n_paths` Brownian paths, each
/// observed on grids with `finest_steps / 2^j` steps, `j < levels`.
pub fn pathwise_convergence(
    basis: &EigenSystem,
    obs: &ObservableTriple,
    window: &SpaceWindow,
    cfg: &PathwiseStudyConfig,
) -> Result<ConvergenceStudy> {
    if cfg.levels < 2 {
        return Err(Error::Config("convergence study needs at least two levels".into()));
    }
    let factor_max = 1usize << (cfg.levels - 1);
    if !cfg.finest_steps.is_multiple_of(factor_max) {
        return Err(Error::Config("finest_steps must be divisible by 2^(levels-1)".into()));
    }
    let basis = damped_basis(basis, cfg.epsilon, 1e-20)?;
    let fine = TimeGrid::uniform(cfg.horizon, cfg.finest_steps)?;
    let evaluators: Vec<PathwiseEvaluator> = (0..cfg.levels)
        .map(|j| {
            let grid = TimeGrid::uniform(cfg.horizon, cfg.finest_steps >> j)?;
            PathwiseEvaluator::new(&basis, cfg.epsilon, grid, window, cfg.space_points)
        })
        .collect::<Result<_>>()?;

    let per_path: Vec<Vec<PathwiseBreakdown>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<PathwiseBreakdown>> {
            let path = sample_path(&basis, Scheme::ExpEuler, fine, cfg.epsilon, cfg.seed, cfg.stream_offset.wrapping_add(i))?;
            evaluators
                .iter()
                .enumerate()
                .map(|(j, ev)| {
                    if j == 0 {
                        ev.evaluate(&path, obs)
                    } else {
                        ev.evaluate(&path.coarsened(1 << j)?, obs)
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let levels: Vec<ConvergenceLevel> = (0..cfg.levels)
        .map(|j| {
            let rw: Vec<f64> = per_path.iter().map(|p| p[j].residual_wick.powi(2)).collect();
            let rz: Vec<f64> = per_path.iter().map(|p| p[j].residual_zambotti.powi(2)).collect();
            let n = per_path.len() as f64;
            let gap = per_path
                .iter()
                .map(|p| {
                    let b = &p[j];
                    if b.scale == 0.0 {
                        0.0
                    } else {
                        (b.residual_wick - b.residual_zambotti).abs() / b.scale
                    }
                })
                .fold(0.0_f64, f64::max);
            ConvergenceLevel {
                delta: evaluators[j].grid.delta(),
                rms_wick: (pairwise_sum(&rw) / n).sqrt(),
                rms_zambotti: (pairwise_sum(&rz) / n).sqrt(),
                max_form_gap: gap,
            }
        })
        .collect();
    let deltas: Vec<f64> = levels.iter().map(|l| l.delta).collect();
    let fit = |v: Vec<f64>| -> LogLogFit { loglog_fit(&deltas, &v) };
    let slope_wick = fit(levels.iter().map(|l| l.rms_wick).collect()).slope;
    let slope_zambotti = fit(levels.iter().map(|l| l.rms_zambotti).collect()).slope;
    Ok(ConvergenceStudy {
        observable: obs.name().to_owned(),
        epsilon: cfg.epsilon,
        n_paths: cfg.n_paths,
        n_modes: basis.n_modes(),
        levels,
        slope_wick,
        slope_zambotti,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::registry;
    use crate::window::window;

    fn basis(n: usize) -> EigenSystem {
        EigenSystem::with_modes(n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::from_times(&[0.0, 0.1, 0.2, 0.3]).is_ok());
        assert!(matches!(
            TimeGrid::from_times(&[0.0, 0.1, 0.25]),
            Err(Error::NonUniformGrid(_))
        ));
        assert!(TimeGrid::from_times(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn zero_start_and_recurrence() {
        let b = basis(8);
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let p = sample_path(&b, Scheme::ExpEuler, grid, 0.0, 11, 2).unwrap();
        for n in b.modes() {
            assert_eq!(p.coeff(n, 0), 0.0);
            let decay = (-b.lambda(n) * grid.delta()).exp();
            for k in 0..64 {
                let want = decay * (p.coeff(n, k) + p.increment(n, k).unwrap());
                assert_eq!(p.coeff(n, k + 1), want);
            }
        }
        let q = sample_path(&b, Scheme::ExpEuler, grid, 0.0, 11, 2).unwrap();
        assert_eq!(p.coeffs(), q.coeffs());
        let ou = sample_path(&b, Scheme::ExactOu, grid, 0.0, 11, 2).unwrap();
        assert!(matches!(ou.increments(), Err(Error::MissingIncrements("exact_ou"))));
        assert!(stoch_exponential(&ou, &ShiftField::zero(1.0)).is_err());
    }

    #[test]
    fn field_boundary_and_second_derivative() {
        let b = basis(64);
        let grid = TimeGrid::uniform(0.5, 8).unwrap();
        let p = sample_path(&b, Scheme::ExactOu, grid, 0.01, 3, 0).unwrap();
        assert!(field(&p, 8, 0.0, Deriv::Value).unwrap().abs() < 1e-15);
        assert!(field(&p, 8, 1.0, Deriv::Value).unwrap().abs() < 1e-12);
        let h = 1e-4;
        let x = 0.37;
        let v = |x| field(&p, 8, x, Deriv::Value).unwrap();
        let fd = (v(x + h) - 2.0 * v(x) + v(x - h)) / (h * h);
        let exact = field(&p, 8, x, Deriv::Dxx).unwrap();
        assert!((fd - exact).abs() / exact.abs() < 1e-5, "{fd} vs {exact}");
    }

    #[test]
    fn coarsening_preserves_brownian_path() {
        let b = basis(4);
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let p = sample_path(&b, Scheme::ExpEuler, grid, 0.0, 5, 9).unwrap();
        let c = p.coarsened(4).unwrap();
        assert_eq!(c.grid().steps(), 16);
        for n in b.modes() {
            let fine: f64 = p.increments().unwrap()[(n - 1) * 64..n * 64].iter().sum();
            let coarse: f64 = c.increments().unwrap()[(n - 1) * 16..n * 16].iter().sum();
            assert!((fine - coarse).abs() < 1e-12);
        }
        assert!(p.coarsened(3).is_err());
    }

    #[test]
    fn stoch_exponential_of_zero_is_one() {
        let b = basis(4);
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let p = sample_path(&b, Scheme::ExpEuler, grid, 0.0, 1, 1).unwrap();
        assert_eq!(stoch_exponential(&p, &ShiftField::zero(1.0)).unwrap(), 1.0);
    }

    #[test]
    fn linear_ito_sum_is_projection_of_brownian_motion() {
        let b = basis(16);
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let p = sample_path(&b, Scheme::ExpEuler, grid, 0.0, 4, 4).unwrap();
        let w = window("poly_bump").unwrap();
        let lin = registry("linear").unwrap();
        let got = pathwise_ito_integral(&p, &lin, &w, 64).unwrap();
        let rule = GaussLegendre::new(64).unwrap();
        let want: f64 = b
            .modes()
            .map(|n| {
                let ln = rule.integrate(0.0, 1.0, |x| w.l(x) * b.e(n, x));
                let beta: f64 = p.increments().unwrap()[(n - 1) * 32..n * 32].iter().sum();
                ln * beta
            })
            .sum();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn pathwise_requires_positive_epsilon() {
        let b = basis(4);
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let p = sample_path(&b, Scheme::ExpEuler, grid, 0.0, 1, 1).unwrap();
        let w = window("poly_bump").unwrap();
        let tanh = registry("tanh").unwrap();
        assert!(matches!(
            pathwise_identity_residual(&p, &tanh, &w, IdentityForm::WickForm, 32),
            Err(Error::EpsilonRequired(_))
        ));
    }

    #[test]
    fn forms_agree_per_path() {
        let b = damped_basis(&basis(128), 0.01, 1e-20).unwrap();
        let grid = TimeGrid::uniform(0.5, 128).unwrap();
        let p = sample_path(&b, Scheme::ExpEuler, grid, 0.01, 8, 1).unwrap();
        let w = window("center_bump").unwrap();
        let tanh = registry("tanh").unwrap();
        let ev = PathwiseEvaluator::new(&b, 0.01, grid, &w, 128).unwrap();
        let r = ev.evaluate(&p, &tanh).unwrap();
        assert!((r.residual_wick - r.residual_zambotti).abs() <= 1e-10 * r.scale, "{r:?}");
    }
}
