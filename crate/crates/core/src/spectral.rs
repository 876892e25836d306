//! Closed-form spectral objects for the Dirichlet heat operator on `[0, 1]`.
//!
//! The sine basis `e_n(x) = √2 sin(πnx)` diagonalises `∂xx` with eigenvalue
//! `-mu_n`, `mu_n = π²n²`. Time evolution under `∂t = κ ∂xx` decays mode `n`
//! at rate `lambda_n = κ mu_n`. Every kernel quantity below is the truncated
//! series over `n = 1..=n_modes`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_unit_interval, Error, Result};
use crate::quadrature::adaptive_integrate;

pub const DEFAULT_KAPPA: f64 = 0.5;

/// Dirichlet sine eigenbasis with its decay rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    n_modes: usize,
    kappa: f64,
}

impl EigenSystem {
    pub fn new(n_modes: usize, kappa: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Config("n_modes must be positive".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self { n_modes, kappa })
    }

    pub fn with_modes(n_modes: usize) -> Result<Self> {
        Self::new(n_modes, DEFAULT_KAPPA)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Spatial eigenvalue of `-∂xx`.
    #[inline]
    pub fn mu(&self, n: usize) -> f64 {
        let n = n as f64;
        PI * PI * n * n
    }

    /// Temporal decay rate of mode `n`.
    #[inline]
    pub fn lambda(&self, n: usize) -> f64 {
        self.kappa * self.mu(n)
    }

    #[inline]
    pub fn e(&self, n: usize, x: f64) -> f64 {
        SQRT_2 * (PI * n as f64 * x).sin()
    }

    #[inline]
    pub fn e_dx(&self, n: usize, x: f64) -> f64 {
        SQRT_2 * PI * n as f64 * (PI * n as f64 * x).cos()
    }

    #[inline]
    pub fn e_dxx(&self, n: usize, x: f64) -> f64 {
        -self.mu(n) * self.e(n, x)
    }

    pub fn modes(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.n_modes
    }

    /// Per-mode decay `exp(-lambda_n s)` for all modes.
    pub fn decay(&self, s: f64) -> Vec<f64> {
        self.modes().map(|n| (-self.lambda(n) * s).exp()).collect()
    }

    /// Squared eigenfunctions `e_n(x)^2` for all modes.
    pub fn e_squared(&self, x: f64) -> Vec<f64> {
        self.modes()
            .map(|n| {
                let v = self.e(n, x);
                v * v
            })
            .collect()
    }
}

/// Arguments of a pointwise kernel evaluation.
#[derive(Debug, Clone, Copy)]
pub struct KernelQuery<'a> {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub epsilon: f64,
    pub basis: &'a EigenSystem,
}

impl<'a> KernelQuery<'a> {
    pub fn new(basis: &'a EigenSystem, t: f64, x: f64, y: f64) -> Self {
        Self {
            t,
            x,
            y,
            epsilon: 0.0,
            basis,
        }
    }

    pub fn regularized(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    fn validate(&self) -> Result<f64> {
        check_nonnegative("t", self.t)?;
        check_nonnegative("epsilon", self.epsilon)?;
        check_unit_interval("x", self.x)?;
        check_unit_interval("y", self.y)?;
        let total = self.t + self.epsilon;
        if total <= 0.0 {
            return Err(Error::DegenerateTime(total));
        }
        Ok(total)
    }
}

/// `g_{t+ε}(x, y)`.
pub fn kernel(q: &KernelQuery) -> Result<f64> {
    let tau = q.validate()?;
    let b = q.basis;
    Ok(b.modes()
        .map(|n| (-b.lambda(n) * tau).exp() * b.e(n, q.x) * b.e(n, q.y))
        .sum())
}

/// `∂xx g_{t+ε}(x, y)`, differentiating in `x`.
pub fn kernel_dxx(q: &KernelQuery) -> Result<f64> {
    let tau = q.validate()?;
    let b = q.basis;
    Ok(b.modes()
        .map(|n| -b.mu(n) * (-b.lambda(n) * tau).exp() * b.e(n, q.x) * b.e(n, q.y))
        .sum())
}

/// Pointwise variance `E[|u^ε_t(x)|²] = ∫₀ᵗ∫₀¹ g²_{t-s+ε}(x,y) dy ds`.
pub fn sigma2(t: f64, x: f64, epsilon: f64, basis: &EigenSystem) -> Result<f64> {
    check_nonnegative("t", t)?;
    check_nonnegative("epsilon", epsilon)?;
    check_unit_interval("x", x)?;
    Ok(basis
        .modes()
        .map(|n| {
            let lam = basis.lambda(n);
            let e = basis.e(n, x);
            (-2.0 * lam * epsilon).exp() * (-(-2.0 * lam * t).exp_m1()) / (2.0 * lam) * e * e
        })
        .sum())
}

/// Time derivative of [`sigma2`]: `∫₀¹ g²_{s+ε}(x,y) dy = g_{2(s+ε)}(x,x)`.
pub fn sigma2_rate(s: f64, x: f64, epsilon: f64, basis: &EigenSystem) -> Result<f64> {
    check_nonnegative("s", s)?;
    check_nonnegative("epsilon", epsilon)?;
    check_unit_interval("x", x)?;
    let tau = s + epsilon;
    if tau <= 0.0 {
        return Err(Error::DegenerateTime(tau));
    }
    Ok(basis
        .modes()
        .map(|n| {
            let e = basis.e(n, x);
            (-2.0 * basis.lambda(n) * tau).exp() * e * e
        })
        .sum())
}

/// Renormalization counterterm `∫₀¹ g_ε²(x,y) dy`.
pub fn counterterm(x: f64, epsilon: f64, basis: &EigenSystem) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::EpsilonRequired(epsilon));
    }
    sigma2_rate(0.0, x, epsilon, basis)
}

/// Covariance `E[u^ε_s(x) ∂xx u^ε_s(x)] = ∫₀ˢ∫₀¹ g_{s-v+ε} ∂xx g_{s-v+ε} dy dv`.
///
/// It closes the Leibniz rule
/// `sigma2_rate(s) = counterterm + 2κ · wick_correction(s)`.
/// At `ε = 0` the value is the `n_modes`-truncated sum, which diverges as the
/// truncation is removed.
pub fn wick_correction(s: f64, x: f64, epsilon: f64, basis: &EigenSystem) -> Result<f64> {
    check_nonnegative("s", s)?;
    check_nonnegative("epsilon", epsilon)?;
    check_unit_interval("x", x)?;
    if s + epsilon <= 0.0 {
        return Err(Error::DegenerateTime(s + epsilon));
    }
    Ok(-basis
        .modes()
        .map(|n| {
            let lam = basis.lambda(n);
            let e = basis.e(n, x);
            basis.mu(n) * (-2.0 * lam * epsilon).exp() * (-(-2.0 * lam * s).exp_m1()) / (2.0 * lam) * e * e
        })
        .sum::<f64>())
}

/// Smooth time profile of one shift-field mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Constant { amp: f64 },
    /// `amp · sin(omega s + phase)`
    Sine { amp: f64, omega: f64, phase: f64 },
    /// `amp · exp(-rate s)`
    Exp { amp: f64, rate: f64 },
    /// `Σ c_k s^k`
    Poly { coeffs: Vec<f64> },
}

impl Envelope {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Envelope::Constant { amp } => *amp,
            Envelope::Sine { amp, omega, phase } => amp * (omega * s + phase).sin(),
            Envelope::Exp { amp, rate } => amp * (-rate * s).exp(),
            Envelope::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftMode {
    pub n: usize,
    pub envelope: Envelope,
}

/// Deterministic space-time function `f(s, y) = Σ τ_n(s) e_n(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftField {
    pub modes: Vec<ShiftMode>,
    pub horizon: f64,
}

impl ShiftField {
    pub fn zero(horizon: f64) -> Self {
        Self {
            modes: Vec::new(),
            horizon,
        }
    }

    pub fn single(n: usize, envelope: Envelope, horizon: f64) -> Self {
        Self {
            modes: vec![ShiftMode { n, envelope }],
            horizon,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mode projection `f_n(s)`; zero for modes that are not listed.
    pub fn mode(&self, n: usize, s: f64) -> f64 {
        self.modes
            .iter()
            .filter(|m| m.n == n)
            .map(|m| m.envelope.eval(s))
            .sum()
    }

    pub fn eval(&self, s: f64, y: f64, basis: &EigenSystem) -> f64 {
        self.modes
            .iter()
            .map(|m| m.envelope.eval(s) * basis.e(m.n, y))
            .sum()
    }

    /// `∫₀¹∫₀ᵗ f² ds dy = Σ_n ∫₀ᵗ τ_n² ds` (listed modes are combined per index).
    pub fn squared_norm(&self, t: f64) -> f64 {
        self.distinct_modes()
            .into_iter()
            .map(|n| adaptive_integrate(&|s| self.mode(n, s).powi(2), 0.0, t, 1e-13))
            .sum()
    }

    pub fn distinct_modes(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.modes.iter().map(|m| m.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    pub fn validate(&self, basis: &EigenSystem) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "shift field horizon must be positive, got {}",
                self.horizon
            )));
        }
        for m in &self.modes {
            if m.n == 0 || m.n > basis.n_modes() {
                return Err(Error::Config(format!(
                    "shift field mode {} outside 1..={}",
                    m.n,
                    basis.n_modes()
                )));
            }
        }
        Ok(())
    }
}

/// Per-mode Duhamel integral `∫₀ᵗ exp(-lambda (t - s)) τ(s) ds`.
pub fn duhamel(lambda: f64, t: f64, tau: impl Fn(f64) -> f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    adaptive_integrate(&|s: f64| (-lambda * (t - s)).exp() * tau(s), 0.0, t, 1e-14)
}

/// Girsanov mean `m(t,x) = ∫₀ᵗ∫₀¹ g_{t-s}(x,y) f(s,y) dy ds` together with
/// `∂xx m` and the time derivative `∂t m = f + κ ∂xx m`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanBundle {
    pub m: f64,
    pub m_dxx: f64,
    pub m_rate: f64,
}

pub fn mean_bundle(t: f64, x: f64, f: &ShiftField, basis: &EigenSystem) -> Result<MeanBundle> {
    check_nonnegative("t", t)?;
    check_unit_interval("x", x)?;
    if t > f.horizon {
        return Err(Error::Horizon {
            t,
            horizon: f.horizon,
        });
    }
    let mut out = MeanBundle::default();
    for n in f.distinct_modes() {
        let lam = basis.lambda(n);
        let i_n = duhamel(lam, t, |s| f.mode(n, s));
        let e = basis.e(n, x);
        out.m += i_n * e;
        out.m_dxx -= basis.mu(n) * i_n * e;
    }
    out.m_rate = f.eval(t, x, basis) + basis.kappa() * out.m_dxx;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;

    fn basis(n: usize) -> EigenSystem {
        EigenSystem::with_modes(n).unwrap()
    }

    #[test]
    fn eigenfunctions_vanish_on_boundary_and_are_orthonormal() {
        let b = basis(64);
        let rule = GaussLegendre::new(512).unwrap();
        for n in b.modes() {
            assert!(b.e(n, 0.0).abs() < 1e-15);
            assert!(b.e(n, 1.0).abs() < 1e-12);
        }
        for n in [1, 2, 17, 64] {
            for m in [1, 3, 17, 63, 64] {
                let ip = rule.integrate(0.0, 1.0, |y| b.e(n, y) * b.e(m, y));
                let want = if n == m { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-10, "<e{n}, e{m}> = {ip}");
            }
        }
        for n in 1..64 {
            assert!(b.lambda(n + 1) > b.lambda(n));
            assert_eq!(b.lambda(n), b.kappa() * b.mu(n));
        }
    }

    #[test]
    fn kernel_boundary_and_symmetry() {
        let b = basis(128);
        assert_eq!(kernel(&KernelQuery::new(&b, 0.1, 0.0, 0.5)).unwrap(), 0.0);
        let a = kernel(&KernelQuery::new(&b, 0.2, 0.3, 0.7)).unwrap();
        let c = kernel(&KernelQuery::new(&b, 0.2, 0.7, 0.3)).unwrap();
        assert!((a - c).abs() < 1e-14);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        let b = basis(8);
        assert!(matches!(
            kernel(&KernelQuery::new(&b, 0.0, 0.3, 0.4)),
            Err(Error::DegenerateTime(_))
        ));
        assert!(matches!(
            kernel(&KernelQuery::new(&b, 0.1, 1.3, 0.4)),
            Err(Error::Domain { .. })
        ));
        assert!(kernel(&KernelQuery::new(&b, 0.0, 0.3, 0.4).regularized(0.01)).is_ok());
        assert!(matches!(counterterm(0.5, 0.0, &b), Err(Error::EpsilonRequired(_))));
    }

    #[test]
    fn kernel_dxx_matches_second_difference() {
        let b = basis(128);
        let h = 1e-4;
        let g = |x| kernel(&KernelQuery::new(&b, 0.3, x, 0.6)).unwrap();
        let fd = (g(0.4 + h) - 2.0 * g(0.4) + g(0.4 - h)) / (h * h);
        let exact = kernel_dxx(&KernelQuery::new(&b, 0.3, 0.4, 0.6)).unwrap();
        assert!((fd - exact).abs() / exact.abs() < 1e-6, "{fd} vs {exact}");
        assert_eq!(kernel_dxx(&KernelQuery::new(&b, 0.3, 0.0, 0.6)).unwrap(), 0.0);
    }

    #[test]
    fn kernel_solves_heat_equation_with_kappa() {
        let b = basis(128);
        let dt = 1e-5;
        let g = |t| kernel(&KernelQuery::new(&b, t, 0.4, 0.6)).unwrap();
        let dg_dt = (g(0.3 + dt) - g(0.3 - dt)) / (2.0 * dt);
        let dxx = kernel_dxx(&KernelQuery::new(&b, 0.3, 0.4, 0.6)).unwrap();
        assert!((dg_dt - b.kappa() * dxx).abs() < 1e-6);
    }

    #[test]
    fn sigma2_rate_is_the_time_derivative() {
        let b = basis(128);
        let h = 1e-5;
        let fd = (sigma2(0.3 + h, 0.4, 0.0, &b).unwrap() - sigma2(0.3 - h, 0.4, 0.0, &b).unwrap()) / (2.0 * h);
        let rate = sigma2_rate(0.3, 0.4, 0.0, &b).unwrap();
        assert!((fd - rate).abs() / rate < 1e-6);
        assert_eq!(sigma2(0.0, 0.3, 0.0, &b).unwrap(), 0.0);
        assert_eq!(sigma2_rate(0.2, 0.0, 0.0, &b).unwrap(), 0.0);
    }

    #[test]
    fn counterterm_is_rate_at_zero() {
        let b = basis(128);
        let c = counterterm(0.5, 0.01, &b).unwrap();
        let r = sigma2_rate(0.0, 0.5, 0.01, &b).unwrap();
        assert!((c - r).abs() <= 1e-14 * c);
        assert_eq!(counterterm(0.0, 0.01, &b).unwrap(), 0.0);
    }

    #[test]
    fn leibniz_rule_closes() {
        let b = basis(128);
        let (s, x, eps) = (0.3, 0.4, 0.01);
        let lhs = sigma2_rate(s, x, eps, &b).unwrap();
        let rhs = counterterm(x, eps, &b).unwrap() + 2.0 * b.kappa() * wick_correction(s, x, eps, &b).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(wick_correction(0.0, 0.4, 0.01, &b).unwrap(), 0.0);
    }

    #[test]
    fn envelope_forms() {
        assert_eq!(Envelope::Constant { amp: 2.0 }.eval(3.0), 2.0);
        assert_eq!(Envelope::Poly { coeffs: vec![1.0, 2.0, 3.0] }.eval(2.0), 17.0);
        let e = Envelope::Exp { amp: 2.0, rate: 1.0 };
        assert!((e.eval(1.0) - 2.0 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn shift_field_projection() {
        let b = basis(8);
        let f = ShiftField {
            modes: vec![
                ShiftMode { n: 1, envelope: Envelope::Constant { amp: 1.0 } },
                ShiftMode { n: 3, envelope: Envelope::Constant { amp: -0.5 } },
            ],
            horizon: 1.0,
        };
        assert_eq!(f.mode(1, 0.2), 1.0);
        assert_eq!(f.mode(2, 0.2), 0.0);
        let x = 0.3;
        let want = b.e(1, x) - 0.5 * b.e(3, x);
        assert!((f.eval(0.4, x, &b) - want).abs() < 1e-15);
        assert!((f.squared_norm(0.5) - 0.625).abs() < 1e-13);
    }

    #[test]
    fn mean_bundle_zero_field() {
        let b = basis(16);
        let mb = mean_bundle(0.5, 0.3, &ShiftField::zero(1.0), &b).unwrap();
        assert_eq!(mb, MeanBundle::default());
        assert!(matches!(
            mean_bundle(1.5, 0.3, &ShiftField::zero(1.0), &b),
            Err(Error::Horizon { .. })
        ));
    }
}
