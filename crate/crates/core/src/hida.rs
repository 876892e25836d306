//! Negative-order Hida norm of `∂xx u_t(x)`.
//!
//! The kernel of `∂xx u_t(x)` is `s, y ↦ ∂xx g_{t-s}(x, y) 1_{[0,t]}(s)`.
//! In space the inverse operator cancels the eigenvalue brought down by
//! `∂xx`, leaving `g`. In time the indicator-truncated exponential
//! `h_n(s) = e^{-λ_n (t-s)} 1_{[0,t]}(s)` is expanded in the periodic Fourier
//! basis of `[0, T]` and frequency `k` is damped by `ν_k^{-2p}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit_interval, Error, Result};
use crate::quadrature::pairwise_sum;
use crate::spectral::{sigma2, EigenSystem};

pub const DEFAULT_RESOLUTION: usize = 4096;

/// Relative size of the unresolved frequency tail that is tolerated.
const TAIL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMultiplier {
    /// `ν_k = max(2πk/T, 1)`
    Floored,
    /// `ν_k = 1`
    ConstantOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierConvention {
    pub time_multiplier: TimeMultiplier,
    pub order: u32,
}

impl Default for MultiplierConvention {
    fn default() -> Self {
        Self {
            time_multiplier: TimeMultiplier::Floored,
            order: 2,
        }
    }
}

impl MultiplierConvention {
    pub fn constant_one() -> Self {
        Self {
            time_multiplier: TimeMultiplier::ConstantOne,
            order: 2,
        }
    }

    pub fn nu(&self, k: usize, horizon: f64) -> f64 {
        match self.time_multiplier {
            TimeMultiplier::Floored => (std::f64::consts::TAU * k as f64 / horizon).max(1.0),
            TimeMultiplier::ConstantOne => 1.0,
        }
    }

    /// Weight `ν_k^{-2p}` applied to squared coefficients.
    pub fn weight(&self, k: usize, horizon: f64) -> f64 {
        self.nu(k, horizon).powi(-2 * self.order as i32)
    }

    /// `lim_{k→∞} ν_k^{-2p}`.
    fn limit_weight(&self) -> f64 {
        match self.time_multiplier {
            TimeMultiplier::Floored => 0.0,
            TimeMultiplier::ConstantOne => 1.0,
        }
    }

    pub fn label(&self) -> String {
        let kind = match self.time_multiplier {
            TimeMultiplier::Floored => "floored",
            TimeMultiplier::ConstantOne => "constant_one",
        };
        format!("{kind}/p={}", self.order)
    }
}

/// Mode-`n` coefficient of `∂xx g` relative to that of `g`.
pub fn dxx_factor(basis: &EigenSystem, n: usize) -> f64 {
    -basis.mu(n)
}

/// Spatial step: undoes the eigenvalue factor of [`dxx_factor`].
pub fn spatial_step(basis: &EigenSystem, n: usize, coeff: f64) -> f64 {
    -coeff / basis.mu(n)
}

/// `∫₀ᵗ e^{-λ(t-s)} e^{-iωs} ds` as `(re, im)`.
fn truncated_exp_coefficient(lambda: f64, omega: f64, t: f64) -> (f64, f64) {
    // (e^{-iωt} − e^{-λt}) / (λ − iω)
    let (s, c) = (omega * t).sin_cos();
    let (nr, ni) = (c - (-lambda * t).exp(), -s);
    let den = lambda * lambda + omega * omega;
    ((nr * lambda - ni * omega) / den, (ni * lambda + nr * omega) / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HidaNorm {
    pub t: f64,
    pub x: f64,
    /// Squared weighted norm.
    pub norm: f64,
    /// `∫₀ᵗ∫₀¹ g²_{t-s}(x,y) dy ds`
    pub upper_bound: f64,
    pub ratio: f64,
    pub convention: String,
    pub resolution: usize,
    pub n_modes: usize,
    pub horizon: f64,
}

/// Squared negative-order norm of `∂xx u_t(x)` with `resolution` retained
/// time frequencies on the period `[0, horizon]`.
pub fn hida_norm_dxx(
    t: f64,
    x: f64,
    horizon: f64,
    convention: &MultiplierConvention,
    basis: &EigenSystem,
    resolution: usize,
) -> Result<HidaNorm> {
    if !(t > 0.0) || t > horizon {
        return Err(Error::Horizon { t, horizon });
    }
    check_unit_interval("x", x)?;
    if convention.order == 0 {
        return Err(Error::Config("multiplier order must be positive".into()));
    }
    if resolution == 0 {
        return Err(Error::Resolution("at least one time frequency is required".into()));
    }
    let omega = std::f64::consts::TAU / horizon;
    let weights: Vec<f64> = (0..=resolution).map(|k| convention.weight(k, horizon)).collect();
    let tail_weight = convention.weight(resolution + 1, horizon);
    let per_mode: Vec<(f64, f64)> = basis
        .modes()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| {
            let lam = basis.lambda(n);
            let space = spatial_step(basis, n, dxx_factor(basis, n) * basis.e(n, x));
            let energy = -(-2.0 * lam * t).exp_m1() / (2.0 * lam);
            let mut captured = Vec::with_capacity(resolution + 1);
            let mut weighted = Vec::with_capacity(resolution + 1);
            for (k, w) in weights.iter().enumerate() {
                let (re, im) = truncated_exp_coefficient(lam, omega * k as f64, t);
                let b = if k == 0 { 1.0 } else { 2.0 } / horizon;
                let sq = b * (re * re + im * im);
                captured.push(sq);
                weighted.push(w * sq);
            }
            let remainder = (energy - pairwise_sum(&captured)).max(0.0);
            let sq_space = space * space;
            let value = sq_space * (pairwise_sum(&weighted) + tail_weight * remainder);
            let slack = sq_space * (tail_weight - convention.limit_weight()).abs() * remainder;
            (value, slack)
        })
        .collect();
    let values: Vec<f64> = per_mode.iter().map(|p| p.0).collect();
    let slacks: Vec<f64> = per_mode.iter().map(|p| p.1).collect();
    let norm = pairwise_sum(&values);
    let slack = pairwise_sum(&slacks);
    if slack > TAIL_TOLERANCE * norm {
        return Err(Error::Resolution(format!(
            "time-frequency tail {slack:.3e} exceeds {TAIL_TOLERANCE:e} of the norm {norm:.3e} at resolution {resolution}"
        )));
    }
    let upper_bound = sigma2(t, x, 0.0, basis)?;
    Ok(HidaNorm {
        t,
        x,
        norm,
        upper_bound,
        ratio: norm / upper_bound,
        convention: convention.label(),
        resolution,
        n_modes: basis.n_modes(),
        horizon,
    })
}
