//! Report rows and their CSV / JSON encodings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{Error, Result};

/// One measured quantity. `uncertainty` is present only for Monte Carlo
/// metrics and holds one standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub suite: String,
    pub scenario: String,
    pub metric: String,
    pub value: f64,
    pub uncertainty: Option<f64>,
    pub pass: bool,
    /// Sorted `key=value` pairs joined by `;`.
    pub metadata: String,
}

impl ReportRow {
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.suite, &self.scenario, &self.metric)
    }
}

/// Append-only collection of rows for one suite run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    rows: Vec<ReportRow>,
}

/// Builder for the `metadata` column.
#[derive(Debug, Clone, Default)]
pub struct Meta(BTreeMap<String, String>);

impl Meta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    /// Appends a deterministic metric.
    pub fn metric(&mut self, suite: &str, scenario: &str, metric: &str, value: f64, pass: bool, meta: &Meta) {
        self.push(ReportRow {
            suite: suite.to_owned(),
            scenario: scenario.to_owned(),
            metric: metric.to_owned(),
            value,
            uncertainty: None,
            pass,
            metadata: meta.render(),
        });
    }

    /// Appends a Monte Carlo metric with its standard error.
    pub fn mc_metric(
        &mut self,
        suite: &str,
        scenario: &str,
        metric: &str,
        value: f64,
        std_error: f64,
        pass: bool,
        meta: &Meta,
    ) {
        self.push(ReportRow {
            suite: suite.to_owned(),
            scenario: scenario.to_owned(),
            metric: metric.to_owned(),
            value,
            uncertainty: Some(std_error),
            pass,
            metadata: meta.render(),
        });
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, &self.rows)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        match format {
            Format::Csv => self.write_csv(file),
            Format::Json => self.write_json(file),
        }
    }

    /// Reads a report written by [`Report::write`], inferring the format
    /// from the extension.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::GoldenMissing(path.display().to_string()));
        }
        let file = BufReader::new(File::open(path)?);
        let rows = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_reader(file)?
        } else {
            csv::Reader::from_reader(file)
                .deserialize()
                .collect::<std::result::Result<Vec<ReportRow>, _>>()?
        };
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new();
        r.metric("s", "a", "m", 0.1, true, &Meta::new().with("z", 1).with("b", "x"));
        r.mc_metric("s", "a", "est", 1.25, 0.01, false, &Meta::new());
        r
    }

    #[test]
    fn metadata_is_sorted() {
        assert_eq!(sample().rows()[0].metadata, "b=x;z=1");
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("r.csv", Format::Csv), ("r.json", Format::Json)] {
            let p = dir.path().join(name);
            sample().write(&p, fmt).unwrap();
            assert_eq!(Report::read(&p).unwrap(), sample());
        }
        assert!(matches!(
            Report::read(&dir.path().join("absent.csv")),
            Err(Error::GoldenMissing(_))
        ));
        assert!(!sample().all_pass());
        assert_eq!(sample().failures().len(), 1);
    }
}
