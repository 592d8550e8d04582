//! Panel ingestion and reduction to the differenced cross-section.
//!
//! Every estimator in the crate consumes a [`DiDSample`]: the outcome change
//! `dy = y2 - y1`, a binary treatment indicator and pre-treatment covariates.
//! Two-period panels reduce to it with [`to_canonical`]; staggered-adoption
//! panels reduce to it one `(cohort, period)` pair at a time with
//! [`staggered_transform`].

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::select_rows;

/// Two-period panel `(y1, y2, d, x)`.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub d: Vec<bool>,
    /// `n x p` pre-treatment covariates.
    pub x: Mat<f64>,
    pub unit_id: Option<Vec<String>>,
}

impl PanelDataset {
    pub fn new(
        y1: Vec<f64>,
        y2: Vec<f64>,
        d: Vec<bool>,
        x: Mat<f64>,
        unit_id: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = y1.len();
        for found in [y2.len(), d.len(), x.nrows()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        if let Some(ids) = &unit_id {
            if ids.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: ids.len(),
                });
            }
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!("panel needs at least 2 units, got {n}")));
        }
        check_finite(x.as_ref(), "covariates")?;
        if y1.iter().chain(&y2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcomes contain non-finite values".into()));
        }
        Ok(Self { y1, y2, d, x, unit_id })
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The units at `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&i| self.y1[i]).collect(),
            rows.iter().map(|&i| self.y2[i]).collect(),
            rows.iter().map(|&i| self.d[i]).collect(),
            select_rows(self.x.as_ref(), rows),
            self.unit_id
                .as_ref()
                .map(|ids| rows.iter().map(|&i| ids[i].clone()).collect()),
        )
    }
}

/// Differenced cross-section `(dy, d, x)`.
#[derive(Debug, Clone)]
pub struct DiDSample {
    pub dy: Vec<f64>,
    pub d: Vec<bool>,
    pub x: Mat<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl DiDSample {
    /// Validates and builds a sample. Requires at least one treated and two
    /// control units.
    pub fn new(dy: Vec<f64>, d: Vec<bool>, x: Mat<f64>) -> Result<Self> {
        let n = dy.len();
        for found in [d.len(), x.nrows()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcome changes contain non-finite values".into()));
        }
        check_finite(x.as_ref(), "covariates")?;
        let n_treated = d.iter().filter(|&&t| t).count();
        let n_control = n - n_treated;
        if n_treated < 1 || n_control < 2 {
            return Err(Error::UnusableSample(format!(
                "need at least 1 treated and 2 control units, have {n_treated} treated and {n_control} control"
            )));
        }
        Ok(Self {
            dy,
            d,
            x,
            n_treated,
            n_control,
        })
    }

    pub fn n(&self) -> usize {
        self.dy.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.d[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.d[i]).collect()
    }

    pub fn treated_share(&self) -> f64 {
        self.n_treated as f64 / self.n() as f64
    }

    /// Treatment indicator as 0.0 / 1.0.
    pub fn d_f64(&self) -> Vec<f64> {
        self.d.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
    }

    /// The units at `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&i| self.dy[i]).collect(),
            rows.iter().map(|&i| self.d[i]).collect(),
            select_rows(self.x.as_ref(), rows),
        )
    }
}

impl PartialEq for DiDSample {
    fn eq(&self, other: &Self) -> bool {
        self.dy == other.dy
            && self.d == other.d
            && self.x.nrows() == other.x.nrows()
            && self.x.ncols() == other.x.ncols()
            && (0..self.x.nrows())
                .all(|i| (0..self.x.ncols()).all(|j| self.x[(i, j)] == other.x[(i, j)]))
    }
}

fn check_finite(x: MatRef<'_, f64>, what: &str) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{what} contain a non-finite value at row {i}, column {j}"
                )));
            }
        }
    }
    Ok(())
}

/// `dy = y2 - y1`.
pub fn to_canonical(panel: &PanelDataset) -> Result<DiDSample> {
    let dy = panel.y2.iter().zip(&panel.y1).map(|(b, a)| b - a).collect();
    DiDSample::new(dy, panel.d.clone(), panel.x.clone())
}

/// Units kept by propensity trimming: score in `(0, 1 - t]`.
pub fn trim_mask(pscores: &[f64], t: f64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("trimming threshold must lie in [0, 1), got {t}")));
    }
    if let Some(bad) = pscores.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("propensity score {bad} outside [0, 1]")));
    }
    Ok(pscores.iter().map(|&p| p > 0.0 && p <= 1.0 - t).collect())
}

/// Drops units whose propensity score falls outside `(0, 1 - t]`.
pub fn trim_by_propensity(sample: &DiDSample, pscores: &[f64], t: f64) -> Result<DiDSample> {
    if pscores.len() != sample.n() {
        return Err(Error::DimensionMismatch {
            expected: sample.n(),
            found: pscores.len(),
        });
    }
    let keep = trim_mask(pscores, t)?;
    let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    if rows.is_empty() {
        return Err(Error::UnusableSample(format!("trimming at t = {t} discards every unit")));
    }
    sample.subset(&rows)
}

/// First treated period of a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cohort {
    /// First treated in this 1-based period.
    Period(usize),
    Never,
}

/// Balanced panel over periods `1..=T` with staggered treatment adoption.
#[derive(Debug, Clone)]
pub struct StaggeredPanel {
    /// `n x T` outcomes; column `t - 1` holds period `t`.
    pub y: Mat<f64>,
    pub cohort: Vec<Cohort>,
    pub x: Mat<f64>,
}

impl StaggeredPanel {
    pub fn new(y: Mat<f64>, cohort: Vec<Cohort>, x: Mat<f64>) -> Result<Self> {
        let n = y.nrows();
        for found in [cohort.len(), x.nrows()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        check_finite(y.as_ref(), "outcomes")?;
        check_finite(x.as_ref(), "covariates")?;
        let periods = y.ncols();
        for c in &cohort {
            if let Cohort::Period(g) = *c {
                if g < 2 || g > periods {
                    return Err(Error::InvalidInput(format!(
                        "cohort {g} outside the valid range 2..={periods}"
                    )));
                }
            }
        }
        Ok(Self { y, cohort, x })
    }

    pub fn periods(&self) -> usize {
        self.y.ncols()
    }

    /// Earliest treated cohort, if any unit is ever treated.
    pub fn first_treated_period(&self) -> Option<usize> {
        self.cohort
            .iter()
            .filter_map(|c| match c {
                Cohort::Period(g) => Some(*g),
                Cohort::Never => None,
            })
            .min()
    }
}

/// Differenced cross-section for the group-time effect of cohort `g` at
/// period `t`: cohort-`g` units are treated, never-treated units are controls
/// and `dy = y_t - y_{g-1}`.
pub fn staggered_transform(panel: &StaggeredPanel, g: usize, t: usize) -> Result<DiDSample> {
    let periods = panel.periods();
    if g < 2 || g > periods {
        return Err(Error::InvalidInput(format!("cohort {g} outside 2..={periods}")));
    }
    if t < g || t > periods {
        return Err(Error::InvalidInput(format!("period {t} outside {g}..={periods}")));
    }
    let rows: Vec<usize> = (0..panel.cohort.len())
        .filter(|&i| matches!(panel.cohort[i], Cohort::Never) || panel.cohort[i] == Cohort::Period(g))
        .collect();
    let treated = rows.iter().filter(|&&i| panel.cohort[i] == Cohort::Period(g)).count();
    if treated == 0 {
        return Err(Error::UnusableSample(format!("no units in cohort {g}")));
    }
    if treated == rows.len() {
        return Err(Error::UnusableSample("no never-treated units".into()));
    }
    let dy = rows
        .iter()
        .map(|&i| panel.y[(i, t - 1)] - panel.y[(i, g - 2)])
        .collect();
    let d = rows.iter().map(|&i| panel.cohort[i] == Cohort::Period(g)).collect();
    DiDSample::new(dy, d, select_rows(panel.x.as_ref(), &rows))
}

/// Column mapping for a wide two-period CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelSchema {
    pub y1: String,
    pub y2: String,
    pub d: String,
    /// Covariate columns; `None` picks every `x<k>` column ordered by `k`.
    pub x: Option<Vec<String>>,
    pub unit_id: Option<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            y1: "y1".into(),
            y2: "y2".into(),
            d: "d".into(),
            x: None,
            unit_id: None,
        }
    }
}

/// Column mapping for a wide staggered-adoption CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaggeredSchema {
    /// Outcome columns for periods `1..=T`; `None` picks every `t<k>` column
    /// ordered by `k`.
    pub periods: Option<Vec<String>>,
    /// First treated period; `never`, `inf` or `0` mark never-treated units.
    pub cohort: String,
    pub x: Option<Vec<String>>,
}

impl Default for StaggeredSchema {
    fn default() -> Self {
        Self {
            periods: None,
            cohort: "cohort".into(),
            x: None,
        }
    }
}

struct Table {
    header: HashMap<String, usize>,
    names: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| Error::data(1, "", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let header = names.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::data(line, "", e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec));
        }
        Ok(Self { header, names, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .get(name)
            .copied()
            .ok_or_else(|| Error::data(1, name, "column not found in header"))
    }

    /// Columns named `<prefix><k>` sorted by `k`.
    fn numbered_columns(&self, prefix: &str) -> Vec<String> {
        let mut cols: Vec<(usize, String)> = self
            .names
            .iter()
            .filter_map(|s| {
                s.strip_prefix(prefix)
                    .and_then(|k| k.parse::<usize>().ok())
                    .map(|k| (k, s.clone()))
            })
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, s)| s).collect()
    }

    fn cell<'a>(&self, rec: &'a csv::StringRecord, line: u64, col: usize) -> Result<&'a str> {
        let raw = rec.get(col).unwrap_or("");
        if raw.is_empty() {
            return Err(Error::data(line, &self.names[col], "missing value"));
        }
        Ok(raw)
    }

    fn number(&self, rec: &csv::StringRecord, line: u64, col: usize) -> Result<f64> {
        let raw = self.cell(rec, line, col)?;
        let v: f64 = raw
            .parse()
            .map_err(|_| Error::data(line, &self.names[col], format!("'{raw}' is not numeric")))?;
        if !v.is_finite() {
            return Err(Error::data(line, &self.names[col], format!("'{raw}' is not finite")));
        }
        Ok(v)
    }

    fn covariates(&self, names: &[String]) -> Result<Mat<f64>> {
        let cols = names.iter().map(|c| self.column(c)).collect::<Result<Vec<_>>>()?;
        let mut x = Mat::zeros(self.rows.len(), cols.len());
        for (i, (line, rec)) in self.rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                x[(i, j)] = self.number(rec, *line, c)?;
            }
        }
        Ok(x)
    }

    fn require_rows(&self) -> Result<()> {
        if self.rows.len() < 2 {
            let line = self.rows.last().map(|r| r.0).unwrap_or(1);
            return Err(Error::data(line, "", format!("need at least 2 data rows, found {}", self.rows.len())));
        }
        Ok(())
    }
}

/// Reads a wide two-period panel. Row order is preserved.
pub fn load_panel_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let table = Table::read(path.as_ref())?;
    let (c1, c2, cd) = (table.column(&schema.y1)?, table.column(&schema.y2)?, table.column(&schema.d)?);
    let x_names = schema.x.clone().unwrap_or_else(|| table.numbered_columns("x"));
    let cid = schema.unit_id.as_deref().map(|c| table.column(c)).transpose()?;
    table.require_rows()?;

    let mut y1 = Vec::with_capacity(table.rows.len());
    let mut y2 = Vec::with_capacity(table.rows.len());
    let mut d = Vec::with_capacity(table.rows.len());
    let mut ids = Vec::new();
    for (line, rec) in &table.rows {
        y1.push(table.number(rec, *line, c1)?);
        y2.push(table.number(rec, *line, c2)?);
        let raw = table.cell(rec, *line, cd)?;
        d.push(match raw.parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            _ => return Err(Error::data(*line, &schema.d, format!("treatment must be 0 or 1, found '{raw}'"))),
        });
        if let Some(c) = cid {
            ids.push(table.cell(rec, *line, c)?.to_string());
        }
    }
    let x = table.covariates(&x_names)?;
    PanelDataset::new(y1, y2, d, x, cid.map(|_| ids))
}

/// Reads a wide staggered-adoption panel.
pub fn load_staggered_csv(path: impl AsRef<Path>, schema: &StaggeredSchema) -> Result<StaggeredPanel> {
    let table = Table::read(path.as_ref())?;
    let period_names = schema.periods.clone().unwrap_or_else(|| table.numbered_columns("t"));
    if period_names.len() < 2 {
        return Err(Error::data(1, "", "need at least two period columns"));
    }
    let period_cols = period_names.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
    let cc = table.column(&schema.cohort)?;
    let x_names = schema.x.clone().unwrap_or_else(|| table.numbered_columns("x"));
    table.require_rows()?;

    let periods = period_cols.len();
    let mut y = Mat::zeros(table.rows.len(), periods);
    let mut cohort = Vec::with_capacity(table.rows.len());
    for (i, (line, rec)) in table.rows.iter().enumerate() {
        for (t, &c) in period_cols.iter().enumerate() {
            y[(i, t)] = table.number(rec, *line, c)?;
        }
        let raw = table.cell(rec, *line, cc)?;
        cohort.push(match raw.to_ascii_lowercase().as_str() {
            "never" | "inf" | "0" => Cohort::Never,
            other => match other.parse::<usize>() {
                Ok(g) if (2..=periods).contains(&g) => Cohort::Period(g),
                _ => {
                    return Err(Error::data(
                        *line,
                        &schema.cohort,
                        format!("cohort must be a period in 2..={periods} or 'never', found '{raw}'"),
                    ))
                }
            },
        });
    }
    let x = table.covariates(&x_names)?;
    StaggeredPanel::new(y, cohort, x)
}
