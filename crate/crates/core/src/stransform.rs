//! Deterministic evaluation of the S-transformed Itô-type formula.
//!
//! Against the stochastic exponential of a shift field `f`, each random
//! quantity `φ(u_v(x))` transforms to `(P_{σ²(v,x)} φ)(m(v,x))`. The four
//! right-hand terms then become plain space-time quadratures:
//!
//! * Itô integral: `∫∫ P_{σ²}φ'(m) · f · l`
//! * Wick drift:   `κ ∫∫ P_{σ²}φ'(m) · ∂xx m · l`
//! * Itô correction (Stieltjes in `σ²`): `½ ∫∫ P_{σ²}φ''(m) · ∂s σ² · l`
//!
//! and the identity holds pointwise in `x` by the chain rule, so the residual
//! measures time-quadrature error only. Time integrals run on a mesh graded
//! quadratically towards `s = 0`, where `∂s σ²` blows up like `s^{-1/2}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, Error, Result};
use crate::quadrature::{GaussLegendre, GradedMesh};
use crate::semigroup::{ObservableTriple, Semigroup};
use crate::spectral::{duhamel, EigenSystem, ShiftField};
use crate::window::SpaceWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSettings {
    pub hermite_order: usize,
    pub legendre_points: usize,
    /// Number of panels `K` of the graded time mesh.
    pub stieltjes_panels: usize,
    /// Gauss–Legendre points inside each time panel.
    #[serde(default = "default_panel_points")]
    pub panel_points: usize,
}

fn default_panel_points() -> usize {
    4
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            hermite_order: 64,
            legendre_points: 512,
            stieltjes_panels: 256,
            panel_points: default_panel_points(),
        }
    }
}

impl QuadratureSettings {
    /// Every order doubled.
    pub fn refined(&self) -> Self {
        Self {
            hermite_order: 2 * self.hermite_order,
            legendre_points: 2 * self.legendre_points,
            stieltjes_panels: 2 * self.stieltjes_panels,
            panel_points: self.panel_points,
        }
    }

    /// Only the time mesh doubled. The residual is a time-quadrature error:
    /// the Hermite order is self-calibrating and the identity holds pointwise
    /// in space.
    pub fn time_refined(&self) -> Self {
        Self {
            stieltjes_panels: 2 * self.stieltjes_panels,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hermite_order < 2 || self.legendre_points < 2 || self.panel_points < 1 {
            return Err(Error::QuadratureOrder(
                self.hermite_order.min(self.legendre_points).min(self.panel_points),
            ));
        }
        if self.stieltjes_panels == 0 {
            return Err(Error::Config("stieltjes_panels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureMeta {
    pub hermite_order: usize,
    pub legendre_points: usize,
    pub stieltjes_panels: usize,
    pub panel_points: usize,
    pub grading: u32,
}

/// Evaluated terms of one instance of the formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub t: f64,
    pub epsilon: f64,
    pub lhs: f64,
    pub init: f64,
    pub ito_integral: f64,
    pub wick_drift: f64,
    pub ito_correction: f64,
    pub residual: f64,
    pub scale: f64,
    pub quadrature: QuadratureMeta,
}

impl TermBreakdown {
    fn assemble(t: f64, epsilon: f64, terms: [f64; 5], quadrature: QuadratureMeta) -> Self {
        let [lhs, init, ito_integral, wick_drift, ito_correction] = terms;
        let residual = lhs - (init + ito_integral + wick_drift + ito_correction);
        let scale = terms.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self {
            t,
            epsilon,
            lhs,
            init,
            ito_integral,
            wick_drift,
            ito_correction,
            residual,
            scale,
            quadrature,
        }
    }

    /// `|residual| / scale`, zero when every term vanishes.
    pub fn relative_residual(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.residual.abs() / self.scale
        }
    }
}

/// Deterministic engine bound to a basis, quadrature settings and an
/// optional regularization `ε` (kernel `g_{t-s+ε}`).
#[derive(Debug, Clone)]
pub struct StEngine {
    basis: EigenSystem,
    settings: QuadratureSettings,
    epsilon: f64,
    space_rule: GaussLegendre,
}

/// σ² and ∂sσ² sampled on a time mesh × spatial nodes, reusable across
/// observables and shift fields.
#[derive(Debug, Clone)]
pub struct SpaceTimeTables {
    t0: f64,
    t1: f64,
    mesh: GradedMesh,
    x: Vec<f64>,
    wl: Vec<f64>,
    sigma2: Vec<f64>,
    rate: Vec<f64>,
    sigma2_start: Vec<f64>,
    sigma2_end: Vec<f64>,
    max_sigma2: f64,
}

impl SpaceTimeTables {
    fn at(&self, j: usize, i: usize) -> (f64, f64) {
        let q = self.x.len();
        (self.sigma2[j * q + i], self.rate[j * q + i])
    }
}

impl StEngine {
    pub fn new(basis: EigenSystem, settings: QuadratureSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            basis,
            settings,
            epsilon: 0.0,
            space_rule: GaussLegendre::new(settings.legendre_points)?,
        })
    }

    pub fn regularized(mut self, epsilon: f64) -> Result<Self> {
        check_nonnegative("epsilon", epsilon)?;
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn basis(&self) -> &EigenSystem {
        &self.basis
    }

    pub fn settings(&self) -> &QuadratureSettings {
        &self.settings
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Precomputes σ² and its rate on `[t0, t1] × supp(l)`.
    pub fn tables(&self, t0: f64, t1: f64, window: &SpaceWindow) -> Result<SpaceTimeTables> {
        check_nonnegative("t0", t0)?;
        if !(t1 >= t0) {
            return Err(Error::domain("t", t1, "[t0, horizon]"));
        }
        // The s^{-1/2} singularity only sits at s = 0.
        let grading = if t0 == 0.0 { 2 } else { 1 };
        let mesh = GradedMesh::new(
            t0,
            t1,
            self.settings.stieltjes_panels,
            self.settings.panel_points,
            grading,
        )?;
        let (a, b) = window.support();
        let (x, wl): (Vec<f64>, Vec<f64>) = self
            .space_rule
            .on_interval(a, b)
            .map(|(x, w)| (x, w * window.l(x)))
            .unzip();
        let n_modes = self.basis.n_modes();
        let q = x.len();
        // esq[i * N + n] = e_n(x_i)^2
        let mut esq = Vec::with_capacity(q * n_modes);
        for &xi in &x {
            esq.extend(self.basis.e_squared(xi));
        }
        let eps = self.epsilon;
        let damp2: Vec<f64> = self
            .basis
            .modes()
            .map(|n| (-2.0 * self.basis.lambda(n) * eps).exp())
            .collect();
        let inv2lam: Vec<f64> = self
            .basis
            .modes()
            .map(|n| 0.5 / self.basis.lambda(n))
            .collect();

        let var_coeffs = |v: f64| -> Vec<f64> {
            self.basis
                .modes()
                .enumerate()
                .map(|(k, n)| damp2[k] * (-(-2.0 * self.basis.lambda(n) * v).exp_m1()) * inv2lam[k])
                .collect()
        };
        let contract = |coeffs: &[f64], out: &mut Vec<f64>| {
            for i in 0..q {
                let row = &esq[i * n_modes..(i + 1) * n_modes];
                out.push(row.iter().zip(coeffs).map(|(a, b)| a * b).sum());
            }
        };

        let v_count = mesh.len();
        let mut sigma2 = Vec::with_capacity(v_count * q);
        let mut rate = Vec::with_capacity(v_count * q);
        for &v in mesh.nodes() {
            contract(&var_coeffs(v), &mut sigma2);
            let rc: Vec<f64> = self
                .basis
                .modes()
                .enumerate()
                .map(|(k, n)| damp2[k] * (-2.0 * self.basis.lambda(n) * v).exp())
                .collect();
            contract(&rc, &mut rate);
        }
        let mut sigma2_start = Vec::with_capacity(q);
        contract(&var_coeffs(t0), &mut sigma2_start);
        let mut sigma2_end = Vec::with_capacity(q);
        contract(&var_coeffs(t1), &mut sigma2_end);
        let max_sigma2 = sigma2_end
            .iter()
            .chain(&sigma2)
            .fold(0.0_f64, |m, &v| m.max(v));
        Ok(SpaceTimeTables {
            t0,
            t1,
            mesh,
            x,
            wl,
            sigma2,
            rate,
            sigma2_start,
            sigma2_end,
            max_sigma2,
        })
    }

    /// Per-mode regularized Duhamel integrals `e^{-λε} ∫₀ᵛ e^{-λ(v-s)} τ_n(s) ds`
    /// and envelopes `e^{-λε} τ_n(v)` for each listed mode.
    fn shift_modes(&self, f: &ShiftField, v: f64) -> Vec<(usize, f64, f64)> {
        f.distinct_modes()
            .into_iter()
            .map(|n| {
                let lam = self.basis.lambda(n);
                let damp = (-lam * self.epsilon).exp();
                let i_n = duhamel(lam, v, |s| f.mode(n, s));
                (n, damp * i_n, damp * f.mode(n, v))
            })
            .collect()
    }

    /// `(m, ∂xx m, f)` at a node whose eigenfunction values `e_n(x)` are
    /// given in the same order as `modes`.
    fn mean_at(&self, modes: &[(usize, f64, f64)], e_at_x: &[f64]) -> (f64, f64, f64) {
        let (mut m, mut m_dxx, mut f) = (0.0, 0.0, 0.0);
        for (&(n, i_n, tau), &e) in modes.iter().zip(e_at_x) {
            m += i_n * e;
            m_dxx -= self.basis.mu(n) * i_n * e;
            f += tau * e;
        }
        (m, m_dxx, f)
    }

    /// Evaluates all terms on precomputed tables; `init` is the left-hand
    /// side at `t0`.
    pub fn terms(&self, tables: &SpaceTimeTables, obs: &ObservableTriple, f: &ShiftField) -> Result<TermBreakdown> {
        if tables.t1 > f.horizon {
            return Err(Error::Horizon {
                t: tables.t1,
                horizon: f.horizon,
            });
        }
        f.validate(&self.basis)?;
        let q = tables.x.len();
        let kappa = self.basis.kappa();

        // Shift projections along the time mesh.
        let mesh_modes: Vec<Vec<(usize, f64, f64)>> = if f.is_zero() {
            vec![Vec::new(); tables.mesh.len()]
        } else {
            tables.mesh.nodes().iter().map(|&v| self.shift_modes(f, v)).collect()
        };
        let end_modes = self.shift_modes(f, tables.t1);
        let start_modes = self.shift_modes(f, tables.t0);

        let max_mean = mesh_modes
            .iter()
            .chain([&end_modes, &start_modes])
            .map(|modes| modes.iter().map(|m| m.1.abs()).sum::<f64>() * std::f64::consts::SQRT_2)
            .fold(0.0_f64, f64::max);
        let sg = Semigroup::calibrated(obs, self.settings.hermite_order, tables.max_sigma2, max_mean)?;

        let shift_ns = f.distinct_modes();
        let n_shift = shift_ns.len();
        let e_shift: Vec<f64> = tables
            .x
            .iter()
            .flat_map(|&x| shift_ns.iter().map(move |&n| (n, x)))
            .map(|(n, x)| self.basis.e(n, x))
            .collect();
        let e_at = |i: usize| &e_shift[i * n_shift..(i + 1) * n_shift];

        let boundary = |sig: &[f64], modes: &[(usize, f64, f64)]| -> f64 {
            (0..q)
                .map(|i| {
                    let (m, _, _) = self.mean_at(modes, e_at(i));
                    tables.wl[i] * sg.apply3(obs, sig[i], m)[0]
                })
                .sum()
        };
        let lhs = boundary(&tables.sigma2_end, &end_modes);
        let init = boundary(&tables.sigma2_start, &start_modes);

        // Per-node partial sums are reduced in mesh order, so the result
        // does not depend on the thread count.
        let partials: Vec<[f64; 3]> = (0..tables.mesh.len())
            .into_par_iter()
            .map(|j| {
                let modes = &mesh_modes[j];
                let mut acc = [0.0; 3];
                for i in 0..q {
                    let (sig, rate) = tables.at(j, i);
                    let (m, m_dxx, fv) = self.mean_at(modes, e_at(i));
                    let p = sg.apply3(obs, sig, m);
                    let wl = tables.wl[i];
                    acc[0] += wl * p[1] * fv;
                    acc[1] += wl * p[1] * m_dxx;
                    acc[2] += wl * p[2] * rate;
                }
                acc
            })
            .collect();
        let (mut ito, mut wick, mut corr) = (0.0, 0.0, 0.0);
        for (acc, &dv) in partials.iter().zip(tables.mesh.weights()) {
            ito += dv * acc[0];
            wick += dv * acc[1];
            corr += dv * acc[2];
        }
        let meta = QuadratureMeta {
            hermite_order: sg.order(),
            legendre_points: self.settings.legendre_points,
            stieltjes_panels: self.settings.stieltjes_panels,
            panel_points: self.settings.panel_points,
            grading: tables.mesh.grading,
        };
        Ok(TermBreakdown::assemble(
            tables.t1,
            self.epsilon,
            [lhs, init, ito, kappa * wick, 0.5 * corr],
            meta,
        ))
    }

    /// Full breakdown of the identity on `[0, t]`.
    pub fn residual(&self, t: f64, obs: &ObservableTriple, window: &SpaceWindow, f: &ShiftField) -> Result<TermBreakdown> {
        let tables = self.tables(0.0, t, window)?;
        self.terms(&tables, obs, f)
    }

    /// Breakdown on `[t0, t1]`, with `init` the left-hand side at `t0`.
    pub fn residual_between(
        &self,
        t0: f64,
        t1: f64,
        obs: &ObservableTriple,
        window: &SpaceWindow,
        f: &ShiftField,
    ) -> Result<TermBreakdown> {
        let tables = self.tables(t0, t1, window)?;
        self.terms(&tables, obs, f)
    }

    pub fn lhs_term(&self, t: f64, obs: &ObservableTriple, window: &SpaceWindow, f: &ShiftField) -> Result<f64> {
        Ok(self.residual(t, obs, window, f)?.lhs)
    }

    pub fn ito_integral_term(&self, t: f64, obs: &ObservableTriple, window: &SpaceWindow, f: &ShiftField) -> Result<f64> {
        Ok(self.residual(t, obs, window, f)?.ito_integral)
    }

    pub fn wick_drift_term(&self, t: f64, obs: &ObservableTriple, window: &SpaceWindow, f: &ShiftField) -> Result<f64> {
        Ok(self.residual(t, obs, window, f)?.wick_drift)
    }

    pub fn ito_correction_term(&self, t: f64, obs: &ObservableTriple, window: &SpaceWindow, f: &ShiftField) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::domain("t", t, "(0, horizon]"));
        }
        Ok(self.residual(t, obs, window, f)?.ito_correction)
    }

    /// Itô correction at `K` and `2K` panels; `warning` is set when the
    /// relative change exceeds `tolerance`.
    pub fn ito_correction_checked(
        &self,
        t: f64,
        obs: &ObservableTriple,
        window: &SpaceWindow,
        f: &ShiftField,
        tolerance: f64,
    ) -> Result<MeshCheck> {
        let coarse = self.ito_correction_term(t, obs, window, f)?;
        let mut finer_settings = self.settings;
        finer_settings.stieltjes_panels *= 2;
        let finer = StEngine::new(self.basis, finer_settings)?.regularized(self.epsilon)?;
        let fine = finer.ito_correction_term(t, obs, window, f)?;
        let rel_change = if fine == 0.0 {
            (fine - coarse).abs()
        } else {
            (fine - coarse).abs() / fine.abs()
        };
        Ok(MeshCheck {
            coarse,
            fine,
            rel_change,
            warning: rel_change > tolerance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshCheck {
    pub coarse: f64,
    pub fine: f64,
    pub rel_change: f64,
    pub warning: bool,
}
