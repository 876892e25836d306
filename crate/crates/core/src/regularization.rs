//! Behaviour of the regularized terms as `ε → 0`: the gradient square and the
//! counterterm both blow up like `ε^{-1/2}`, their difference stays bounded,
//! and every regular term of the S-transformed identity converges.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit_interval, Error, Result};
use crate::fit::loglog_fit;
use crate::semigroup::ObservableTriple;
use crate::spectral::{counterterm, EigenSystem, ShiftField};
use crate::stransform::StEngine;
use crate::window::SpaceWindow;

pub const DEFAULT_LADDER: [f64; 7] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5];

/// Mode count used by the divergence study.
pub const STUDY_MODES: usize = 4096;

const TAIL_BOUND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Counterterm,
    GradSquareMean,
    RenormalizedMean,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [
        Quantity::Counterterm,
        Quantity::GradSquareMean,
        Quantity::RenormalizedMean,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::Counterterm => "counterterm",
            Quantity::GradSquareMean => "grad_square_mean",
            Quantity::RenormalizedMean => "renormalized_mean",
        }
    }
}

/// `E[(∂x u^ε_t(x))²]`.
pub fn grad_square_mean(t: f64, x: f64, epsilon: f64, basis: &EigenSystem) -> Result<f64> {
    check_unit_interval("x", x)?;
    Ok(basis
        .modes()
        .map(|n| mode_contribution(n, t, x, epsilon, basis).0)
        .sum())
}

/// Mode-`n` parts of `(grad_square_mean, counterterm)`.
pub fn mode_contribution(n: usize, t: f64, x: f64, epsilon: f64, basis: &EigenSystem) -> (f64, f64) {
    let lam = basis.lambda(n);
    let damp = (-2.0 * lam * epsilon).exp();
    let c = (std::f64::consts::PI * n as f64 * x).cos();
    let grad = damp * (-(-2.0 * lam * t).exp_m1()) * 2.0 * c * c * basis.mu(n) / (2.0 * lam);
    let e = basis.e(n, x);
    (grad, damp * e * e)
}

pub fn quantity_value(q: Quantity, t: f64, x: f64, epsilon: f64, basis: &EigenSystem) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::EpsilonRequired(epsilon));
    }
    match q {
        Quantity::Counterterm => counterterm(x, epsilon, basis),
        Quantity::GradSquareMean => grad_square_mean(t, x, epsilon, basis),
        Quantity::RenormalizedMean => {
            check_unit_interval("x", x)?;
            Ok(basis
                .modes()
                .map(|n| {
                    let (g, c) = mode_contribution(n, t, x, epsilon, basis);
                    g - c
                })
                .sum())
        }
    }
}

/// Rejects bases whose last retained mode still matters at `epsilon`.
pub fn check_tail(basis: &EigenSystem, epsilon: f64) -> Result<()> {
    let tail = (-2.0 * basis.lambda(basis.n_modes()) * epsilon).exp();
    if tail >= TAIL_BOUND {
        return Err(Error::InsufficientModes(format!(
            "exp(-2 lambda_N eps) = {tail:.3e} at N = {}, eps = {epsilon}",
            basis.n_modes()
        )));
    }
    Ok(())
}

fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 2 {
        return Err(Error::Config("epsilon ladder needs at least two values".into()));
    }
    if ladder.iter().any(|&e| !(e > 0.0 && e <= 0.1)) {
        return Err(Error::Config("epsilon ladder values must lie in (0, 0.1]".into()));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("epsilon ladder must be strictly decreasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFit {
    pub quantity: Quantity,
    pub t: f64,
    pub x: f64,
    pub n_modes: usize,
    pub ladder: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl DivergenceFit {
    /// `|v(ε_{i+1}) − v(ε_i)|` along the ladder.
    pub fn cauchy_diffs(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Log-log fit of a closed-form quantity over the ladder.
pub fn divergence_fit(q: Quantity, t: f64, x: f64, ladder: &[f64], basis: &EigenSystem) -> Result<DivergenceFit> {
    validate_ladder(ladder)?;
    check_tail(basis, ladder[ladder.len() - 1])?;
    let values: Vec<f64> = ladder
        .par_iter()
        .map(|&eps| quantity_value(q, t, x, eps, basis))
        .collect::<Result<_>>()?;
    let fit = loglog_fit(ladder, &values);
    Ok(DivergenceFit {
        quantity: q,
        t,
        x,
        n_modes: basis.n_modes(),
        ladder: ladder.to_vec(),
        values,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub epsilon: f64,
    pub term: String,
    pub value: f64,
    /// Distance to the previous rung of the same term; absent on the first.
    pub cauchy_diff: Option<f64>,
}

pub const TABLE_TERMS: [&str; 4] = ["lhs", "ito_integral", "wick_drift", "ito_correction"];

/// The four S-transform terms at time `t` for each `ε` of the ladder.
pub fn epsilon_convergence_table(
    engine: &StEngine,
    obs: &ObservableTriple,
    window: &SpaceWindow,
    f: &ShiftField,
    t: f64,
    ladder: &[f64],
) -> Result<Vec<TableRow>> {
    validate_ladder(ladder)?;
    let breakdowns = ladder
        .iter()
        .map(|&eps| engine.clone().regularized(eps)?.residual(t, obs, window, f))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(ladder.len() * TABLE_TERMS.len());
    for (i, b) in breakdowns.iter().enumerate() {
        let vals = [b.lhs, b.ito_integral, b.wick_drift, b.ito_correction];
        for (j, term) in TABLE_TERMS.iter().enumerate() {
            let cauchy_diff = (i > 0).then(|| {
                let p = &breakdowns[i - 1];
                let prev = [p.lhs, p.ito_integral, p.wick_drift, p.ito_correction];
                (vals[j] - prev[j]).abs()
            });
            rows.push(TableRow {
                epsilon: ladder[i],
                term: (*term).to_owned(),
                value: vals[j],
                cauchy_diff,
            });
        }
    }
    Ok(rows)
}

/// Column of one term, in ladder order.
pub fn table_column<'a>(rows: &'a [TableRow], term: &str) -> Vec<&'a TableRow> {
    rows.iter().filter(|r| r.term == term).collect()
}

/// CSV with columns `epsilon, term, value, cauchy_diff`.
pub fn write_table_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_validation() {
        assert!(validate_ladder(&DEFAULT_LADDER).is_ok());
        assert!(validate_ladder(&[1e-3, 1e-2]).is_err());
        assert!(validate_ladder(&[0.5, 1e-2]).is_err());
        assert!(validate_ladder(&[1e-2]).is_err());
    }

    #[test]
    fn tail_check() {
        let small = EigenSystem::with_modes(128).unwrap();
        assert!(matches!(
            divergence_fit(Quantity::Counterterm, 0.5, 0.5, &DEFAULT_LADDER, &small),
            Err(Error::InsufficientModes(_))
        ));
        let big = EigenSystem::with_modes(STUDY_MODES).unwrap();
        assert!(check_tail(&big, 1e-5).is_ok());
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            TableRow {
                epsilon: 0.01,
                term: "lhs".into(),
                value: 1.5,
                cauchy_diff: None,
            },
            TableRow {
                epsilon: 0.001,
                term: "lhs".into(),
                value: 1.25,
                cauchy_diff: Some(0.25),
            },
        ];
        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epsilon,term,value,cauchy_diff\n0.01,lhs,1.5,\n0.001,lhs,1.25,0.25\n");
    }
}
