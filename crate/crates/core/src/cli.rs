//! Command-line front end.
//!
//! Every flag has a key of the same name (with `_` for `-`) in the JSON
//! config file given by `--config` or the `BAYESDID_CONFIG` environment
//! variable; flags win over the file. Exit status: 0 on success, 2 for
//! configuration errors, 3 for data or I/O errors, 4 for estimation errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bayes::DRBayesConfig;
use crate::data::{
    load_panel_csv, load_staggered_csv, staggered_transform, to_canonical, DiDSample, PanelDataset, PanelSchema,
    StaggeredSchema,
};
use crate::estimate::{run_methods, EstimateSettings, Method, MethodEstimate};
use crate::report::{estimate_report, metrics_report, ReportFormat};
use crate::simulation::{run_monte_carlo, Design, ErrorKind, SimDesignConfig};

pub const CONFIG_ENV: &str = "BAYESDID_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "bayesdid", version, about = "Semiparametric Bayesian difference-in-differences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the ATT on a panel stored as CSV.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study on a simulation design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON config file; defaults to $BAYESDID_CONFIG when set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated methods: bayes, dr-bayes, or, dr, ipw-ht, ipw-hajek, twfe.
    #[arg(long)]
    pub method: Option<String>,
    /// Posterior draws B.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplier of the prior-adjustment scale.
    #[arg(long)]
    pub c_varsigma: Option<f64>,
    #[arg(long)]
    pub sample_split: bool,
    /// Drop units with fitted propensity above 1 - t.
    #[arg(long)]
    pub trim: Option<f64>,
    /// Report format: csv, json or text-table.
    #[arg(long)]
    pub format: Option<String>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Ridge penalty of the propensity logit.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub y1: Option<String>,
    #[arg(long)]
    pub y2: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    /// Comma-separated covariate columns; default every x<k> column.
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub unit_id: Option<String>,
    /// Read a wide staggered-adoption panel and estimate ATT(g, t).
    #[arg(long)]
    pub staggered: bool,
    /// Cohort g (first treated period) for --staggered.
    #[arg(long)]
    pub group: Option<usize>,
    /// Period t for --staggered.
    #[arg(long)]
    pub time: Option<usize>,
    /// Comma-separated period columns; default every t<k> column.
    #[arg(long)]
    pub periods: Option<String>,
    #[arg(long)]
    pub cohort: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// I, II, III or IV.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Covariate dimension; a comma-separated list runs one cell per value.
    #[arg(long)]
    pub p: Option<String>,
    /// normal, chisq3 or hetero.
    #[arg(long)]
    pub error_kind: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Selection index sum_j x_j / j with propensities near 0 and 1.
    #[arg(long)]
    pub extreme_overlap: bool,
    /// 1000 replications with 5000 draws each.
    #[arg(long)]
    pub paper_scale: bool,
}

/// Accepts `"a,b"` or `["a", "b"]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ListValue {
    One(String),
    Many(Vec<String>),
    Numbers(Vec<usize>),
    Number(usize),
}

impl ListValue {
    fn joined(&self) -> String {
        match self {
            ListValue::One(s) => s.clone(),
            ListValue::Many(v) => v.join(","),
            ListValue::Numbers(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ListValue::Number(k) => k.to_string(),
        }
    }
}

/// Keys of the JSON config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    method: Option<ListValue>,
    draws: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    c_varsigma: Option<f64>,
    sample_split: Option<bool>,
    trim: Option<f64>,
    format: Option<String>,
    output: Option<PathBuf>,
    threads: Option<usize>,
    data: Option<PathBuf>,
    ridge: Option<f64>,
    y1: Option<String>,
    y2: Option<String>,
    d: Option<String>,
    x: Option<ListValue>,
    unit_id: Option<String>,
    staggered: Option<bool>,
    group: Option<usize>,
    time: Option<usize>,
    periods: Option<ListValue>,
    cohort: Option<String>,
    design: Option<String>,
    n: Option<usize>,
    p: Option<ListValue>,
    error_kind: Option<String>,
    reps: Option<usize>,
    extreme_overlap: Option<bool>,
    paper_scale: Option<bool>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Estimation(_) => 4,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => format!("configuration error: {m}"),
            CliError::Data(m) => format!("data error: {m}"),
            CliError::Estimation(m) => format!("estimation error: {m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => return Ok(FileConfig::default()),
        },
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

/// Common settings after merging flags over the file.
struct Resolved {
    methods: Vec<Method>,
    bayes: DRBayesConfig,
    trim: Option<f64>,
    format: ReportFormat,
    output: Option<PathBuf>,
    threads: Option<usize>,
}

fn resolve_common(c: &CommonArgs, f: &FileConfig, default_draws: usize) -> CliResult<Resolved> {
    let methods = match c.method.clone().or_else(|| f.method.as_ref().map(ListValue::joined)) {
        Some(s) => Method::parse_list(&s).map_err(config_err)?,
        None => vec![Method::Bayes, Method::DrBayes],
    };
    if methods.is_empty() {
        return Err(CliError::Config("no methods requested".into()));
    }
    let format = match c.format.as_ref().or(f.format.as_ref()) {
        Some(s) => s.parse().map_err(config_err)?,
        None => ReportFormat::TextTable,
    };
    let bayes = DRBayesConfig {
        draws: c.draws.or(f.draws).unwrap_or(default_draws),
        alpha: c.alpha.or(f.alpha).unwrap_or(0.05),
        seed: c.seed.or(f.seed).unwrap_or(0),
        c_varsigma: c.c_varsigma.or(f.c_varsigma).unwrap_or(1.0),
        sample_split: c.sample_split || f.sample_split.unwrap_or(false),
        ridge: f.ridge.unwrap_or(0.0),
        ..DRBayesConfig::default()
    };
    bayes.validate().map_err(config_err)?;
    let trim = c.trim.or(f.trim);
    if let Some(t) = trim {
        if !(0.0..0.5).contains(&t) {
            return Err(CliError::Config(format!("trim must lie in [0, 0.5), got {t}")));
        }
    }
    let threads = c.threads.or(f.threads);
    if threads == Some(0) {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    Ok(Resolved {
        methods,
        bayes,
        trim,
        format,
        output: c.output.clone().or_else(|| f.output.clone()),
        threads,
    })
}

/// Writes via a temporary file in the target directory, renamed on success.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents.as_bytes()).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn emit(
    out: &mut dyn Write,
    report: String,
    summary: impl FnOnce() -> CliResult<String>,
    output: Option<&Path>,
) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Data(format!("cannot write to standard output: {e}"));
    match output {
        Some(path) => {
            write_atomic(path, &report)?;
            out.write_all(summary()?.as_bytes()).map_err(io)?;
            writeln!(out, "report written to {}", path.display()).map_err(io)
        }
        None => out.write_all(report.as_bytes()).map_err(io),
    }
}

fn load_sample(a: &EstimateArgs, f: &FileConfig) -> CliResult<(DiDSample, Option<PanelDataset>)> {
    let data = a
        .data
        .clone()
        .or_else(|| f.data.clone())
        .ok_or_else(|| CliError::Config("estimate requires --data".into()))?;
    let x = a.x.clone().or_else(|| f.x.as_ref().map(ListValue::joined)).map(|s| split_list(&s));
    let data_err = |e: crate::Error| CliError::Data(e.to_string());

    if a.staggered || f.staggered.unwrap_or(false) {
        let (g, t) = match (a.group.or(f.group), a.time.or(f.time)) {
            (Some(g), Some(t)) => (g, t),
            _ => return Err(CliError::Config("--staggered requires --group and --time".into())),
        };
        let defaults = StaggeredSchema::default();
        let schema = StaggeredSchema {
            periods: a.periods.clone().or_else(|| f.periods.as_ref().map(ListValue::joined)).map(|s| split_list(&s)),
            cohort: a.cohort.clone().or_else(|| f.cohort.clone()).unwrap_or(defaults.cohort),
            x,
        };
        let panel = load_staggered_csv(&data, &schema).map_err(data_err)?;
        let sample = staggered_transform(&panel, g, t).map_err(|e| match e {
            crate::Error::InvalidInput(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        })?;
        return Ok((sample, None));
    }

    let defaults = PanelSchema::default();
    let schema = PanelSchema {
        y1: a.y1.clone().or_else(|| f.y1.clone()).unwrap_or(defaults.y1),
        y2: a.y2.clone().or_else(|| f.y2.clone()).unwrap_or(defaults.y2),
        d: a.d.clone().or_else(|| f.d.clone()).unwrap_or(defaults.d),
        x,
        unit_id: a.unit_id.clone().or_else(|| f.unit_id.clone()),
    };
    let panel = load_panel_csv(&data, &schema).map_err(data_err)?;
    let sample = to_canonical(&panel).map_err(data_err)?;
    Ok((sample, Some(panel)))
}

pub fn cmd_estimate(a: &EstimateArgs, out: &mut dyn Write) -> CliResult<()> {
    let f = load_file_config(a.common.config.as_deref())?;
    let mut r = resolve_common(&a.common, &f, DRBayesConfig::default().draws)?;
    if let Some(ridge) = a.ridge {
        r.bayes.ridge = ridge;
    }
    if !(r.bayes.ridge >= 0.0 && r.bayes.ridge.is_finite()) {
        return Err(CliError::Config(format!("ridge must be >= 0, got {}", r.bayes.ridge)));
    }
    let (sample, panel) = load_sample(a, &f)?;
    if panel.is_none() && r.methods.contains(&Method::Twfe) {
        return Err(CliError::Config("twfe is only available for two-period panels".into()));
    }

    let settings = EstimateSettings {
        bayes: r.bayes.clone(),
        trim: r.trim,
    };
    let outcomes = with_threads(r.threads, || run_methods(&sample, panel.as_ref(), &r.methods, &settings))?
        .map_err(|e| CliError::Estimation(format!("trimming: {e}")))?;
    let mut rows: Vec<MethodEstimate> = Vec::with_capacity(outcomes.len());
    for (m, o) in r.methods.iter().zip(outcomes) {
        rows.push(o.map_err(|e| CliError::Estimation(format!("{m}: {e}")))?);
    }

    let alpha = r.bayes.alpha;
    let report = estimate_report(&rows, alpha, r.format).map_err(|e| CliError::Estimation(e.to_string()))?;
    emit(
        out,
        report,
        || estimate_report(&rows, alpha, ReportFormat::TextTable).map_err(|e| CliError::Estimation(e.to_string())),
        r.output.as_deref(),
    )
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> CliResult<()> {
    let f = load_file_config(a.common.config.as_deref())?;
    let full_scale = a.paper_scale || f.paper_scale.unwrap_or(false);
    let base = if full_scale {
        SimDesignConfig::default().paper_scale()
    } else {
        SimDesignConfig::default()
    };
    let r = resolve_common(&a.common, &f, base.draws)?;

    let design: Design = match a.design.as_ref().or(f.design.as_ref()) {
        Some(s) => s.parse().map_err(config_err)?,
        None => base.design,
    };
    let error_kind: ErrorKind = match a.error_kind.as_ref().or(f.error_kind.as_ref()) {
        Some(s) => s.parse().map_err(config_err)?,
        None => base.error_kind,
    };
    let ps: Vec<usize> = match a.p.clone().or_else(|| f.p.as_ref().map(ListValue::joined)) {
        Some(s) => split_list(&s)
            .iter()
            .map(|v| v.parse::<usize>().map_err(|_| CliError::Config(format!("invalid p '{v}'"))))
            .collect::<CliResult<_>>()?,
        None => vec![base.p],
    };
    if ps.is_empty() {
        return Err(CliError::Config("no covariate dimension given".into()));
    }

    let cells: Vec<SimDesignConfig> = ps
        .iter()
        .map(|&p| SimDesignConfig {
            design,
            n: a.n.or(f.n).unwrap_or(base.n),
            p,
            error_kind,
            reps: a.reps.or(f.reps).unwrap_or(base.reps),
            draws: r.bayes.draws,
            seed: r.bayes.seed,
            extreme_overlap: a.extreme_overlap || f.extreme_overlap.unwrap_or(false),
            trim: r.trim,
            c_varsigma: r.bayes.c_varsigma,
            sample_split: r.bayes.sample_split,
        })
        .collect();
    for c in &cells {
        c.validate().map_err(config_err)?;
    }

    let metrics = with_threads(r.threads, || {
        cells
            .iter()
            .map(|c| run_monte_carlo(c, &r.methods))
            .collect::<crate::Result<Vec<_>>>()
    })?
    .map_err(|e| CliError::Estimation(e.to_string()))?;

    let report = metrics_report(&metrics, r.format).map_err(|e| CliError::Estimation(e.to_string()))?;
    emit(
        out,
        report,
        || metrics_report(&metrics, ReportFormat::TextTable).map_err(|e| CliError::Estimation(e.to_string())),
        r.output.as_deref(),
    )
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "bayesdid: {}", e.message());
            e.exit_code()
        }
    }
}
