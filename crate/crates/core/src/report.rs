//! JSON and CSV serialization of evaluation reports.
//!
//! Output is byte-stable: struct fields serialize in declaration order, maps
//! are ordered, and CSV reals are written with 17 significant digits.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{AblationGrid, EvalReport};

pub const GRID_CSV_HEADER: &str = "min_steps,max_steps,rule,query_per_class,mean_acc,ci95,episodes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ReportRef<'a> {
    Eval(&'a EvalReport),
    Grid(&'a AblationGrid),
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_row(
    out: &mut String,
    min_steps: usize,
    max_steps: usize,
    rule: &str,
    query_per_class: usize,
    report: &EvalReport,
) {
    out.push_str(&format!(
        "{min_steps},{max_steps},{rule},{query_per_class},{},{},{}\n",
        fmt_real(report.mean_accuracy),
        fmt_real(report.ci95),
        report.episodes
    ));
}

pub fn render_report(report: ReportRef<'_>, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = match report {
                ReportRef::Eval(r) => serde_json::to_string_pretty(r)?,
                ReportRef::Grid(g) => serde_json::to_string_pretty(g)?,
            };
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut s = String::from(GRID_CSV_HEADER);
            s.push('\n');
            match report {
                ReportRef::Eval(r) => {
                    let c = &r.config;
                    csv_row(
                        &mut s,
                        c.refine.min_steps,
                        c.refine.max_steps,
                        c.refine.rule.label(),
                        c.sampler.query_per_class(),
                        r,
                    );
                }
                ReportRef::Grid(g) => {
                    for cell in &g.cells {
                        csv_row(
                            &mut s,
                            cell.min_steps,
                            cell.max_steps,
                            cell.rule.label(),
                            cell.query_per_class,
                            &cell.report,
                        );
                    }
                }
            }
            Ok(s)
        }
    }
}

/// Per-shot recall bins as CSV, for plotting recall against class shot.
pub fn render_recall_csv(report: &EvalReport) -> String {
    let mut s = String::from("bin,recall_mean,count,queries\n");
    for b in &report.recall_bins {
        s.push_str(&format!(
            "{},{},{},{}\n",
            b.bin,
            fmt_real(b.recall_mean),
            b.count,
            b.queries
        ));
    }
    s
}

/// Writes the rendered report to `path`, or to stdout when `path` is `None`.
pub fn emit_report(report: ReportRef<'_>, format: ReportFormat, path: Option<&Path>) -> Result<()> {
    let text = render_report(report, format)?;
    write_text(&text, path)
}

pub fn write_text(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}
