//! Serialized estimate and Monte Carlo reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a CSV
//! report parses back to bit-identical values.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{Method, MethodEstimate};
use crate::simulation::{Design, ErrorKind, MCMetrics, MethodMetrics, SimDesignConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
    #[default]
    TextTable,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "text-table" | "text" | "table" => Ok(Self::TextTable),
            other => Err(Error::InvalidInput(format!("unknown format '{other}'; valid formats: csv, json, text-table"))),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv report: {e}"))
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv report: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values serialize");
    s.push('\n');
    s
}

/// Renders `(method, ATT, CI, CI length)` rows.
pub fn estimate_report(rows: &[MethodEstimate], alpha: f64, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(json(rows)),
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(["method", "att", "ci_low", "ci_high", "ci_length", "std_err"]).map_err(csv_err)?;
            for r in rows {
                let se = r.std_err.map(|s| s.to_string()).unwrap_or_default();
                w.write_record([
                    r.method.tag().to_string(),
                    r.estimate.to_string(),
                    r.ci_low.to_string(),
                    r.ci_high.to_string(),
                    r.ci_length().to_string(),
                    se,
                ])
                .map_err(csv_err)?;
            }
            into_string(w)
        }
        ReportFormat::TextTable => {
            let level = format!("{}% CI", 100.0 * (1.0 - alpha));
            let mut out = format!("{:<10} {:>9} {:>22} {:>9}\n", "method", "ATT", level, "length");
            for r in rows {
                let ci = format!("[{:.3}, {:.3}]", r.ci_low, r.ci_high);
                let _ = writeln!(out, "{:<10} {:>9.3} {:>22} {:>9.3}", r.method.tag(), r.estimate, ci, r.ci_length());
            }
            Ok(out)
        }
    }
}

/// One CSV line of a Monte Carlo report: a cell setting and one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub error_kind: ErrorKind,
    pub reps: usize,
    pub draws: usize,
    pub seed: u64,
    pub extreme_overlap: bool,
    pub trim: Option<f64>,
    pub c_varsigma: f64,
    pub sample_split: bool,
    pub method: Method,
    pub bias: f64,
    pub cp: f64,
    pub cil: f64,
    pub mc_se: f64,
    pub reps_ok: usize,
    pub failures: usize,
    pub valid: bool,
}

const METRICS_HEADER: [&str; 19] = [
    "design",
    "n",
    "p",
    "error_kind",
    "reps",
    "draws",
    "seed",
    "extreme_overlap",
    "trim",
    "c_varsigma",
    "sample_split",
    "method",
    "bias",
    "cp",
    "cil",
    "mc_se",
    "reps_ok",
    "failures",
    "valid",
];

impl MetricsRow {
    fn new(c: &SimDesignConfig, m: &MethodMetrics) -> Self {
        Self {
            design: c.design,
            n: c.n,
            p: c.p,
            error_kind: c.error_kind,
            reps: c.reps,
            draws: c.draws,
            seed: c.seed,
            extreme_overlap: c.extreme_overlap,
            trim: c.trim,
            c_varsigma: c.c_varsigma,
            sample_split: c.sample_split,
            method: m.method,
            bias: m.bias,
            cp: m.cp,
            cil: m.cil,
            mc_se: m.mc_se,
            reps_ok: m.reps_ok,
            failures: m.failures,
            valid: m.valid,
        }
    }

    fn config(&self) -> SimDesignConfig {
        SimDesignConfig {
            design: self.design,
            n: self.n,
            p: self.p,
            error_kind: self.error_kind,
            reps: self.reps,
            draws: self.draws,
            seed: self.seed,
            extreme_overlap: self.extreme_overlap,
            trim: self.trim,
            c_varsigma: self.c_varsigma,
            sample_split: self.sample_split,
        }
    }

    fn metrics(&self) -> MethodMetrics {
        MethodMetrics {
            method: self.method,
            bias: self.bias,
            cp: self.cp,
            cil: self.cil,
            mc_se: self.mc_se,
            reps_ok: self.reps_ok,
            failures: self.failures,
            valid: self.valid,
        }
    }
}

/// Renders Monte Carlo cells. The text table has one row per method and one
/// column group per cell.
pub fn metrics_report(cells: &[MCMetrics], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(json(cells)),
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(METRICS_HEADER).map_err(csv_err)?;
            for cell in cells {
                for m in &cell.methods {
                    w.serialize(MetricsRow::new(&cell.config, m)).map_err(csv_err)?;
                }
            }
            into_string(w)
        }
        ReportFormat::TextTable => Ok(metrics_table(cells)),
    }
}

/// Parses a CSV report; consecutive rows with the same setting form a cell.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MCMetrics>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut cells: Vec<MCMetrics> = Vec::new();
    for row in r.deserialize::<MetricsRow>() {
        let row = row.map_err(csv_err)?;
        let config = row.config();
        match cells.last_mut() {
            Some(cell) if cell.config == config => cell.methods.push(row.metrics()),
            _ => cells.push(MCMetrics {
                config,
                methods: vec![row.metrics()],
            }),
        }
    }
    Ok(cells)
}

fn metrics_table(cells: &[MCMetrics]) -> String {
    const GROUP: usize = 36;
    let mut methods: Vec<Method> = Vec::new();
    for m in cells.iter().flat_map(|c| c.methods.iter().map(|m| m.method)) {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }

    let mut out = format!("{:<10}", "");
    for c in cells {
        let label = format!("{} n={} p={} {}", c.config.design, c.config.n, c.config.p, c.config.error_kind);
        let _ = write!(out, " | {label:^GROUP$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<10}", "method");
    for _ in cells {
        let _ = write!(out, " | {:>7} {:>6} {:>6} {:>7} {:>6}", "Bias", "CP", "CIL", "MCSE", "Fail");
    }
    out.push('\n');
    for m in methods {
        let _ = write!(out, "{:<10}", m.tag());
        for c in cells {
            match c.get(m) {
                Some(r) => {
                    let flag = if r.valid { ' ' } else { '*' };
                    let _ = write!(
                        out,
                        " | {:>7.3} {:>5.3}{flag} {:>6.3} {:>7.4} {:>6}",
                        r.bias, r.cp, r.cil, r.mc_se, r.failures
                    );
                }
                None => {
                    let _ = write!(out, " | {:^GROUP$}", "-");
                }
            }
        }
        out.push('\n');
    }
    if cells.iter().flat_map(|c| &c.methods).any(|m| !m.valid) {
        out.push_str("* more than 1% of replications failed\n");
    }
    out
}
