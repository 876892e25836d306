//! The one-dimensional heat semigroup `(P_v φ)(z) = E[φ(z + √v Z)]` applied
//! to test observables, and the registry of observable families.

use std::fmt;

use crate::error::{check_nonnegative, Error, Result};
use crate::quadrature::GaussHermite;

pub const DEFAULT_HERMITE_ORDER: usize = 64;
const MAX_HERMITE_ORDER: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    Linear,
    Quadratic,
    Cosine,
    Tanh,
    Logistic,
}

/// A test observable with analytically coded first and second derivatives.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservableTriple {
    family: Family,
}

impl fmt::Debug for ObservableTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservableTriple")
            .field("name", &self.name())
            .field("bounded", &self.bounded())
            .finish()
    }
}

pub const OBSERVABLE_NAMES: [&str; 5] = ["linear", "quadratic", "cosine", "tanh", "logistic"];

/// Looks up an observable family by name.
pub fn registry(name: &str) -> Result<ObservableTriple> {
    let family = match name {
        "linear" => Family::Linear,
        "quadratic" => Family::Quadratic,
        "cosine" => Family::Cosine,
        "tanh" => Family::Tanh,
        "logistic" => Family::Logistic,
        other => return Err(Error::UnknownObservable(other.to_owned())),
    };
    Ok(ObservableTriple { family })
}

impl ObservableTriple {
    pub fn name(&self) -> &'static str {
        match self.family {
            Family::Linear => "linear",
            Family::Quadratic => "quadratic",
            Family::Cosine => "cosine",
            Family::Tanh => "tanh",
            Family::Logistic => "logistic",
        }
    }

    /// Whether φ belongs to `C_b²` (bounded with bounded derivatives).
    pub fn bounded(&self) -> bool {
        matches!(self.family, Family::Cosine | Family::Tanh | Family::Logistic)
    }

    /// Supremum of `|φ|` for bounded members.
    pub fn sup_abs(&self) -> Option<f64> {
        match self.family {
            Family::Cosine | Family::Tanh | Family::Logistic => Some(1.0),
            _ => None,
        }
    }

    /// `(φ(u), φ'(u), φ''(u))` in one pass.
    #[inline]
    pub fn eval3(&self, u: f64) -> [f64; 3] {
        match self.family {
            Family::Linear => [u, 1.0, 0.0],
            Family::Quadratic => [u * u, 2.0 * u, 2.0],
            Family::Cosine => {
                let (s, c) = u.sin_cos();
                [c, -s, -c]
            }
            Family::Tanh => {
                let th = fast_tanh(u);
                let sech2 = 1.0 - th * th;
                [th, sech2, -2.0 * th * sech2]
            }
            Family::Logistic => {
                let p = logistic(u);
                let d1 = p * (1.0 - p);
                [p, d1, d1 * (1.0 - 2.0 * p)]
            }
        }
    }

    #[inline]
    pub fn phi(&self, u: f64) -> f64 {
        self.eval3(u)[0]
    }

    #[inline]
    pub fn phi1(&self, u: f64) -> f64 {
        self.eval3(u)[1]
    }

    #[inline]
    pub fn phi2(&self, u: f64) -> f64 {
        self.eval3(u)[2]
    }

    pub fn derivative(&self, k: usize, u: f64) -> Result<f64> {
        match k {
            0..=2 => Ok(self.eval3(u)[k]),
            _ => Err(Error::DerivativeOrder(k)),
        }
    }
}

/// Odd-symmetric to the last bit, absolute error a few ulps.
#[inline]
fn fast_tanh(u: f64) -> f64 {
    let a = u.abs();
    let th = if a > 20.0 {
        1.0
    } else {
        let e = (-2.0 * a).exp();
        (1.0 - e) / (1.0 + e)
    };
    th.copysign(u)
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Gauss–Hermite evaluator for `P_v φ^{(k)}`.
#[derive(Debug, Clone)]
pub struct Semigroup {
    rule: GaussHermite,
}

impl Default for Semigroup {
    fn default() -> Self {
        Self::new(DEFAULT_HERMITE_ORDER).expect("default order is valid")
    }
}

impl Semigroup {
    pub fn new(order: usize) -> Result<Self> {
        Ok(Self {
            rule: GaussHermite::new(order)?,
        })
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    /// `E[φ^{(k)}(z + √v Z)]`; exact point evaluation at `v = 0`.
    pub fn apply(&self, obs: &ObservableTriple, k: usize, v: f64, z: f64) -> Result<f64> {
        check_nonnegative("variance", v)?;
        if k > 2 {
            return Err(Error::DerivativeOrder(k));
        }
        Ok(self.apply3(obs, v, z)[k])
    }

    /// All three smoothed derivatives at once.
    ///
    /// Nodes are visited in mirrored pairs `z ± s·x_k`, so odd parts of φ
    /// cancel exactly when `z = 0`.
    #[inline]
    pub fn apply3(&self, obs: &ObservableTriple, v: f64, z: f64) -> [f64; 3] {
        if v == 0.0 {
            return obs.eval3(z);
        }
        let s = v.sqrt();
        let nodes = self.rule.nodes();
        let weights = self.rule.weights();
        let n = nodes.len();
        let mut acc = [0.0; 3];
        for k in 0..n / 2 {
            // nodes[k] = -nodes[n - 1 - k]
            let off = s * nodes[n - 1 - k];
            let lo = obs.eval3(z - off);
            let hi = obs.eval3(z + off);
            let w = weights[k];
            acc[0] += w * (lo[0] + hi[0]);
            acc[1] += w * (lo[1] + hi[1]);
            acc[2] += w * (lo[2] + hi[2]);
        }
        if n % 2 == 1 {
            let d = obs.eval3(z);
            let w = weights[n / 2];
            acc[0] += w * d[0];
            acc[1] += w * d[1];
            acc[2] += w * d[2];
        }
        acc
    }

    /// Doubles `base` until the order-vs-double-order change at the probe
    /// points is at most `1e-10` relative (capped at 512 nodes).
    pub fn calibrated(obs: &ObservableTriple, base: usize, max_var: f64, max_abs_mean: f64) -> Result<Self> {
        let mut current = Self::new(base)?;
        let probes = [
            (max_var, 0.0),
            (max_var, max_abs_mean),
            (max_var, -max_abs_mean),
            (0.5 * max_var, 0.5 * max_abs_mean),
        ];
        while current.order() < MAX_HERMITE_ORDER {
            let finer = Self::new(2 * current.order())?;
            let converged = probes.iter().all(|&(v, z)| {
                let a = current.apply3(obs, v, z);
                let b = finer.apply3(obs, v, z);
                a.iter()
                    .zip(&b)
                    .all(|(x, y)| (x - y).abs() <= 1e-10 * y.abs().max(1e-3))
            });
            if converged {
                return Ok(current);
            }
            current = finer;
        }
        Ok(current)
    }
}

/// `E[φ^{(k)}(z + √v Z)]` at the default Gauss–Hermite order.
pub fn semigroup_apply(obs: &ObservableTriple, k: usize, v: f64, z: f64) -> Result<f64> {
    thread_local! {
        static DEFAULT: Semigroup = Semigroup::default();
    }
    DEFAULT.with(|sg| sg.apply(obs, k, v, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names() {
        for name in OBSERVABLE_NAMES {
            assert_eq!(registry(name).unwrap().name(), name);
        }
        assert!(matches!(registry("cubic"), Err(Error::UnknownObservable(_))));
        let lin = registry("linear").unwrap();
        assert_eq!(lin.eval3(3.5), [3.5, 1.0, 0.0]);
        assert_eq!(registry("quadratic").unwrap().eval3(2.0), [4.0, 4.0, 2.0]);
        assert!(registry("tanh").unwrap().bounded());
        assert!(!registry("quadratic").unwrap().bounded());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for name in OBSERVABLE_NAMES {
            let obs = registry(name).unwrap();
            for i in 0..=40 {
                let u = -5.0 + 0.25 * i as f64;
                let fd1 = (obs.phi(u + h) - obs.phi(u - h)) / (2.0 * h);
                let fd2 = (obs.phi1(u + h) - obs.phi1(u - h)) / (2.0 * h);
                let tol1 = 1e-6 * obs.phi1(u).abs().max(1e-3);
                let tol2 = 1e-6 * obs.phi2(u).abs().max(1e-3);
                assert!((fd1 - obs.phi1(u)).abs() <= tol1, "{name} phi1 at {u}");
                assert!((fd2 - obs.phi2(u)).abs() <= tol2, "{name} phi2 at {u}");
            }
        }
    }

    #[test]
    fn closed_forms() {
        let quad = registry("quadratic").unwrap();
        let got = semigroup_apply(&quad, 0, 0.3, 1.0).unwrap();
        assert!((got - 1.3).abs() < 1e-13);
        let cos = registry("cosine").unwrap();
        let got = semigroup_apply(&cos, 0, 0.5, 0.7).unwrap();
        let want = (-0.25f64).exp() * 0.7f64.cos();
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn zero_variance_is_identity() {
        let tanh = registry("tanh").unwrap();
        for k in 0..3 {
            assert_eq!(semigroup_apply(&tanh, k, 0.0, 0.37).unwrap(), tanh.eval3(0.37)[k]);
        }
        assert!(matches!(semigroup_apply(&tanh, 3, 0.1, 0.0), Err(Error::DerivativeOrder(3))));
        assert!(matches!(semigroup_apply(&tanh, 0, -0.1, 0.0), Err(Error::Domain { .. })));
        assert!(matches!(Semigroup::new(1), Err(Error::QuadratureOrder(1))));
    }

    #[test]
    fn calibration_keeps_default_for_smooth_observables() {
        let tanh = registry("tanh").unwrap();
        let sg = Semigroup::calibrated(&tanh, 64, 0.3, 1.0).unwrap();
        assert_eq!(sg.order(), 64);
    }
}
