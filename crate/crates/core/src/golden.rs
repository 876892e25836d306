//! Regression comparison of a report against a stored golden report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{Report, ReportRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenTolerances {
    /// Absolute tolerance for deterministic metrics (0 means exact).
    pub deterministic: f64,
    /// Per-metric overrides of `deterministic`.
    pub per_metric: BTreeMap<String, f64>,
    /// Width of the band for Monte Carlo metrics, in standard errors.
    pub mc_sigmas: f64,
}

impl Default for GoldenTolerances {
    fn default() -> Self {
        Self {
            deterministic: 0.0,
            per_metric: BTreeMap::new(),
            mc_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenDiff {
    pub suite: String,
    pub scenario: String,
    pub metric: String,
    pub value: f64,
    pub golden: f64,
    pub allowed: f64,
    pub pass_changed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub compared: usize,
    pub diffs: Vec<GoldenDiff>,
}

impl DiffSummary {
    pub fn is_empty(&self) -> bool {
        self.diffs.is_empty()
    }
}

impl std::fmt::Display for DiffSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} rows compared, {} differ", self.compared, self.diffs.len())?;
        for d in &self.diffs {
            writeln!(
                f,
                "  {}/{}/{}: value {:e} vs golden {:e} (allowed {:e}){}",
                d.suite,
                d.scenario,
                d.metric,
                d.value,
                d.golden,
                d.allowed,
                if d.pass_changed { ", pass flag changed" } else { "" }
            )?;
        }
        Ok(())
    }
}

fn allowed(ours: &ReportRow, golden: &ReportRow, tol: &GoldenTolerances) -> f64 {
    match golden.uncertainty.or(ours.uncertainty) {
        Some(se) => tol.mc_sigmas * se,
        None => *tol.per_metric.get(&ours.metric).unwrap_or(&tol.deterministic),
    }
}

/// Row-by-row comparison; row order and keys must match exactly.
pub fn compare_reports(report: &Report, golden: &Report, tol: &GoldenTolerances) -> Result<DiffSummary> {
    let (ours, theirs) = (report.rows(), golden.rows());
    if ours.len() != theirs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows vs {} golden rows",
            ours.len(),
            theirs.len()
        )));
    }
    let mut diffs = Vec::new();
    for (i, (a, b)) in ours.iter().zip(theirs).enumerate() {
        if a.key() != b.key() {
            return Err(Error::ShapeMismatch(format!(
                "row {i}: {:?} vs golden {:?}",
                a.key(),
                b.key()
            )));
        }
        let band = allowed(a, b, tol);
        let same = a.value == b.value || (a.value.is_nan() && b.value.is_nan());
        let within = same || (a.value - b.value).abs() <= band;
        if !within || a.pass != b.pass {
            diffs.push(GoldenDiff {
                suite: a.suite.clone(),
                scenario: a.scenario.clone(),
                metric: a.metric.clone(),
                value: a.value,
                golden: b.value,
                allowed: band,
                pass_changed: a.pass != b.pass,
            });
        }
    }
    Ok(DiffSummary {
        compared: ours.len(),
        diffs,
    })
}

pub fn golden_compare(report: &Report, golden_path: &Path, tol: &GoldenTolerances) -> Result<DiffSummary> {
    let golden = Report::read(golden_path)?;
    compare_reports(report, &golden, tol)
}
