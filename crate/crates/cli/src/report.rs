//! report.json, CSV tables and plots produced by a study.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, Study};
use crate::error::{CliError, Result};
use crate::plot::{self, Labels, PlotKind, Series};

pub const SCHEMA: u32 = 1;

/// One pass/fail comparison `value` against `limit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: value <= limit, value, limit, detail: detail.into() }
    }

    /// Passes when `value >= limit`.
    pub fn at_least(name: impl Into<String>, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: value >= limit, value, limit, detail: detail.into() }
    }

    /// Passes when `value > limit`.
    pub fn above(name: impl Into<String>, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: value > limit, value, limit, detail: detail.into() }
    }

    /// Passes when `lo <= value <= hi`; `limit` records the violated (or nearest) edge.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        let passed = (lo..=hi).contains(&value);
        let limit = if (value - lo).abs() <= (value - hi).abs() { lo } else { hi };
        Self { name: name.into(), passed, value, limit, detail: format!("expected in [{lo}, {hi}]") }
    }

    pub fn flag(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        let v = if passed { 1.0 } else { 0.0 };
        Self { name: name.into(), passed, value: v, limit: 1.0, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub study: Study,
    /// Resolved configuration; re-running it reproduces the report.
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub results: Value,
    pub passed: bool,
}

pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

pub struct Figure {
    pub name: String,
    pub series: Vec<Series>,
    pub kind: PlotKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

/// Everything a study produces before it is written to disk.
pub struct StudyOutput {
    pub report: Report,
    pub tables: Vec<Table>,
    pub figures: Vec<Figure>,
}

impl StudyOutput {
    pub fn new(study: Study, config: &ExperimentConfig, checks: Vec<Check>, results: Value) -> Self {
        let mut config = config.clone();
        config.study = Some(study);
        // The output location does not affect results and would break byte equality across runs.
        config.out = None;
        let passed = checks.iter().all(|c| c.passed);
        Self { report: Report { schema: SCHEMA, study, config, checks, results, passed }, tables: Vec::new(), figures: Vec::new() }
    }

    pub fn table(mut self, name: &str, header: &str, rows: Vec<String>) -> Self {
        self.tables.push(Table { name: name.into(), header: header.into(), rows });
        self
    }

    pub fn figure(mut self, name: &str, kind: PlotKind, labels: Labels<'_>, series: Vec<Series>) -> Self {
        self.figures.push(Figure {
            name: name.into(),
            series,
            kind,
            title: labels.title.into(),
            x_label: labels.x.into(),
            y_label: labels.y.into(),
        });
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("report.json");
        let mut json = serde_json::to_string_pretty(&self.report)?;
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            let mut text = String::with_capacity(64 * (t.rows.len() + 1));
            text.push_str(&t.header);
            text.push('\n');
            for r in &t.rows {
                text.push_str(r);
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        }
        for f in &self.figures {
            let labels = Labels { title: &f.title, x: &f.x_label, y: &f.y_label };
            plot::emit_plot(&f.series, f.kind, labels, &dir.join(format!("{}.svg", f.name)))?;
        }
        Ok(())
    }
}

/// Fixed-width float for CSV cells.
pub fn cell(v: f64) -> String {
    format!("{v:.17e}")
}

/// Optional float cell; empty when absent.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), cell)
}
