//! Gaussian quadrature rules and the composite meshes built from them.
//!
//! Nodes are polished by Newton iteration on the three-term recurrences,
//! which is accurate to a few ulps for the orders used here (up to a few
//! thousand for Legendre, a few hundred for Hermite).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::QuadratureOrder(order));
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.on_interval(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Hermite rule for expectations against a standard normal variable:
/// `E[h(Z)] ≈ Σ w_i h(z_i)` with `Σ w_i = 1`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::QuadratureOrder(order));
        }
        let n = order;
        let pim4 = PI.powf(-0.25);
        let mut x_phys = vec![0.0; n];
        let mut w_phys = vec![0.0; n];
        // Eigenvalues of the Jacobi matrix seed Newton on the recurrence,
        // which then polishes each root and yields its weight.
        let mut guesses = hermite_jacobi_eigenvalues(n);
        guesses.sort_by(|a, b| b.total_cmp(a));
        for i in 0..n.div_ceil(2) {
            let mut z = guesses[i];
            let mut pp = 0.0;
            for _ in 0..50 {
                let (p1, d) = hermite_orthonormal(n, z, pim4);
                pp = d;
                let dz = p1 / d;
                z -= dz;
                if dz.abs() <= 3e-16 * z.abs().max(1.0) {
                    let (_, d) = hermite_orthonormal(n, z, pim4);
                    pp = d;
                    break;
                }
            }
            if n % 2 == 1 && i == n / 2 {
                z = 0.0;
                pp = hermite_orthonormal(n, 0.0, pim4).1;
            }
            x_phys[i] = z;
            x_phys[n - 1 - i] = -z;
            w_phys[i] = 2.0 / (pp * pp);
            w_phys[n - 1 - i] = w_phys[i];
        }
        // Physicists' rule integrates against exp(-x^2); rescale to the
        // standard normal density.
        let norm = PI.sqrt();
        let mut nodes: Vec<f64> = x_phys.iter().map(|x| x * 2f64.sqrt()).collect();
        let mut weights: Vec<f64> = w_phys.iter().map(|w| w / norm).collect();
        nodes.reverse();
        weights.reverse();
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[h(mean + sqrt(var) Z)]`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, var: f64, mut h: F) -> f64 {
        let s = var.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * h(mean + s * z))
            .sum()
    }
}

/// Eigenvalues of the symmetric tridiagonal Jacobi matrix of the
/// physicists' Hermite polynomials (zero diagonal, off-diagonal `√(k/2)`),
/// by implicit QL without eigenvectors.
fn hermite_jacobi_eigenvalues(n: usize) -> Vec<f64> {
    let mut d = vec![0.0_f64; n];
    let mut e: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g: f64 = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0_f64, 1.0_f64, 0.0_f64);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d
}

/// Orthonormal Hermite recurrence; returns `(p_n(z), p_n'(z))`.
fn hermite_orthonormal(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Adaptive composite Gauss–Legendre: each panel is compared against its
/// two halves and split until they agree to `tol` (absolute, scaled by the
/// magnitude of the running estimate).
pub fn adaptive_integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    thread_local! {
        static RULE: GaussLegendre = GaussLegendre::new(10).expect("order 10 is valid");
    }
    RULE.with(|rule| {
        let whole = rule.integrate(a, b, f);
        adaptive_step(rule, f, a, b, whole, tol, 0)
    })
}

fn adaptive_step<F: Fn(f64) -> f64>(
    rule: &GaussLegendre,
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, f);
    let right = rule.integrate(mid, b, f);
    let refined = left + right;
    if depth >= 40 || (refined - whole).abs() <= tol * refined.abs().max(1e-3) {
        return refined;
    }
    adaptive_step(rule, f, a, mid, left, tol, depth + 1)
        + adaptive_step(rule, f, mid, b, right, tol, depth + 1)
}

/// A composite rule on `[t0, t1]` built from `panels` equal panels in a
/// reference variable `r ∈ [0, 1]`, mapped through `s = t0 + (t1 - t0)·r^grading`.
///
/// With `grading = 2` an integrand behaving like `(s - t0)^{-1/2}` becomes
/// smooth in `r`, so the Gauss points inside each panel converge at the
/// usual rate.
#[derive(Debug, Clone)]
pub struct GradedMesh {
    pub t0: f64,
    pub t1: f64,
    pub panels: usize,
    pub points_per_panel: usize,
    pub grading: u32,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GradedMesh {
    pub fn new(t0: f64, t1: f64, panels: usize, points_per_panel: usize, grading: u32) -> Result<Self> {
        if panels == 0 {
            return Err(Error::Config("graded mesh needs at least one panel".into()));
        }
        if grading == 0 {
            return Err(Error::Config("mesh grading exponent must be positive".into()));
        }
        let rule = GaussLegendre::new(points_per_panel)?;
        let len = t1 - t0;
        let g = grading as i32;
        let mut nodes = Vec::with_capacity(panels * points_per_panel);
        let mut weights = Vec::with_capacity(panels * points_per_panel);
        let h = 1.0 / panels as f64;
        for p in 0..panels {
            let a = p as f64 * h;
            for (r, w) in rule.on_interval(a, a + h) {
                nodes.push(t0 + len * r.powi(g));
                weights.push(w * len * g as f64 * r.powi(g - 1));
            }
        }
        Ok(Self {
            t0,
            t1,
            panels,
            points_per_panel,
            grading,
            nodes,
            weights,
        })
    }

    /// Panel boundaries `t0 + (t1 - t0)(k/K)^grading`, `k = 0..=K`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let g = self.grading as i32;
        (0..=self.panels)
            .map(|k| self.t0 + (self.t1 - self.t0) * (k as f64 / self.panels as f64).powi(g))
            .collect()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(s))
            .sum()
    }
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`, never on how the work producing them was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
