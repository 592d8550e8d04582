//! Simulation designs and the Monte Carlo harness.
//!
//! Units are generated as
//!
//! ```text
//! X ~ N((1, -1, 1, ...), S),  S_jk = 0.5^|j-k|
//! D | X ~ Bernoulli(logistic(g(X)))
//! Y1 = h(X) + D mu(X) + alpha + e1
//! Y2(d) = 2 + 2 mu(X) + D mu(X) + alpha + e2(d)
//! ```
//!
//! with `mu = 1.5 h`, so that the outcome change has conditional mean
//! `2 + 2 h(X)` in both arms and the true ATT is zero. Designs I and II use a
//! linear `g`, III and IV add squares; I and III use a linear `h`, II and IV
//! mix in squares.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::DRBayesConfig;
use crate::data::{to_canonical, DiDSample, PanelDataset};
use crate::error::{Error, Result};
use crate::estimate::{run_methods, EstimateSettings, Method, MethodOutcome};
use crate::linalg::cholesky_jittered;
use crate::propensity::logistic;
use crate::rng::{derive_seed, indexed_substream, Substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    I,
    II,
    III,
    IV,
}

impl Design {
    pub const ALL: [Design; 4] = [Design::I, Design::II, Design::III, Design::IV];

    pub fn tag(self) -> &'static str {
        match self {
            Design::I => "I",
            Design::II => "II",
            Design::III => "III",
            Design::IV => "IV",
        }
    }

    fn quadratic_selection(self) -> bool {
        matches!(self, Design::III | Design::IV)
    }

    fn quadratic_outcome(self) -> bool {
        matches!(self, Design::II | Design::IV)
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .iter()
            .copied()
            .find(|d| d.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown design '{s}'; valid designs: I, II, III, IV")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    #[default]
    Normal,
    /// Centered and scaled chi-squared(3) draws for `e1`, `e2(0)`, `e2(1)`.
    Chisq3,
    /// `e2(d) ~ N(0, v(X))` with `v(x) = sum_j (x_j - (-1)^(j-1))^2 / (2p)`.
    Hetero,
}

impl ErrorKind {
    pub fn tag(self) -> &'static str {
        match self {
            ErrorKind::Normal => "normal",
            ErrorKind::Chisq3 => "chisq3",
            ErrorKind::Hetero => "hetero",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ErrorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ErrorKind::Normal, ErrorKind::Chisq3, ErrorKind::Hetero]
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown error kind '{s}'; valid kinds: normal, chisq3, hetero")))
    }
}

/// One Monte Carlo cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimDesignConfig {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub error_kind: ErrorKind,
    pub reps: usize,
    /// Posterior draws per replication.
    pub draws: usize,
    pub seed: u64,
    /// Replaces the selection index by `sum_j x_j / j`, which pushes many
    /// propensities towards 0 and 1.
    pub extreme_overlap: bool,
    pub trim: Option<f64>,
    pub c_varsigma: f64,
    pub sample_split: bool,
}

impl Default for SimDesignConfig {
    fn default() -> Self {
        Self {
            design: Design::I,
            n: 1000,
            p: 5,
            error_kind: ErrorKind::Normal,
            reps: 200,
            draws: 1000,
            seed: 0,
            extreme_overlap: false,
            trim: None,
            c_varsigma: 1.0,
            sample_split: false,
        }
    }
}

impl SimDesignConfig {
    pub const FULL_REPS: usize = 1000;
    pub const FULL_DRAWS: usize = 5000;

    /// Full-scale run: 1000 replications with 5000 posterior draws each.
    pub fn paper_scale(mut self) -> Self {
        self.reps = Self::FULL_REPS;
        self.draws = Self::FULL_DRAWS;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::InvalidInput(format!("n must be at least 50, got {}", self.n)));
        }
        if self.p == 0 {
            return Err(Error::InvalidInput("p must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        if let Some(t) = self.trim {
            if !(0.0..0.5).contains(&t) {
                return Err(Error::InvalidInput(format!("trim must lie in [0, 0.5), got {t}")));
            }
        }
        self.estimator_settings(0).bayes.validate()
    }

    /// Estimator settings of replication `rep`.
    pub fn estimator_settings(&self, rep: usize) -> EstimateSettings {
        EstimateSettings {
            bayes: DRBayesConfig {
                draws: self.draws,
                c_varsigma: self.c_varsigma,
                sample_split: self.sample_split,
                seed: derive_seed(self.seed, Substream::Estimators, rep as u64),
                ..DRBayesConfig::default()
            },
            trim: self.trim,
        }
    }
}

/// `0.5^|j-k|`.
pub fn covariate_covariance(p: usize) -> Mat<f64> {
    Mat::from_fn(p, p, |j, k| 0.5f64.powi(j.abs_diff(k) as i32))
}

/// Mean of covariate `j` (zero-based): `1, -1, 1, ...`.
pub fn covariate_mean(j: usize) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn weighted_sums(x: &[f64]) -> (f64, f64) {
    x.iter().enumerate().fold((0.0, 0.0), |(lin, sq), (j, &v)| {
        let w = 1.0 / (j + 1) as f64;
        (lin + w * v, sq + w * v * v)
    })
}

/// Selection index `g(x)`; the propensity is `logistic(g(x))`.
pub fn selection_index(design: Design, extreme_overlap: bool, x: &[f64]) -> f64 {
    let (lin, sq) = weighted_sums(x);
    if extreme_overlap {
        lin
    } else if design.quadratic_selection() {
        (0.5 * lin + 0.5 * sq) / 4.0
    } else {
        0.5 * lin
    }
}

/// Baseline outcome function `h(x)`.
pub fn outcome_index(design: Design, x: &[f64]) -> f64 {
    let (lin, sq) = weighted_sums(x);
    if design.quadratic_outcome() {
        0.8 * lin + 0.2 * sq
    } else {
        lin
    }
}

/// Variance of the period-2 shocks under [`ErrorKind::Hetero`].
pub fn hetero_variance(x: &[f64]) -> f64 {
    let p = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - covariate_mean(j)).powi(2))
        .sum::<f64>()
        / (2.0 * p)
}

/// `(chi2(3) - 3) / sqrt(6)`.
pub fn chisq3_shock<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let c: f64 = ChiSquared::new(3.0).expect("3 degrees of freedom").sample(rng);
    (c - 3.0) / 6f64.sqrt()
}

/// A generated panel with both period-2 potential outcomes.
#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub panel: PanelDataset,
    pub y2_untreated: Vec<f64>,
    pub y2_treated: Vec<f64>,
    /// `logistic(g(X_i))`.
    pub propensity: Vec<f64>,
}

/// Draws one panel, keeping the potential outcomes.
pub fn generate_design_detailed<R: Rng + ?Sized>(cfg: &SimDesignConfig, rng: &mut R) -> Result<GeneratedPanel> {
    let (n, p) = (cfg.n, cfg.p);
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("n and p must be positive".into()));
    }
    let chol = cholesky_jittered(covariate_covariance(p).as_ref())?;
    let l = chol.l();

    let mut x = Mat::<f64>::zeros(n, p);
    let (mut y1, mut y2, mut y2_0, mut y2_1) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut d = vec![false; n];
    let mut propensity = vec![0.0; n];
    let mut z = vec![0.0; p];
    let mut row = vec![0.0; p];
    let shock = |rng: &mut R| -> f64 {
        match cfg.error_kind {
            ErrorKind::Chisq3 => chisq3_shock(rng),
            _ => StandardNormal.sample(rng),
        }
    };
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(rng);
        }
        for j in 0..p {
            row[j] = covariate_mean(j) + (0..=j).map(|k| l[(j, k)] * z[k]).sum::<f64>();
            x[(i, j)] = row[j];
        }
        let ps = logistic(selection_index(cfg.design, cfg.extreme_overlap, &row));
        let treated = rng.random::<f64>() < ps;
        let h = outcome_index(cfg.design, &row);
        let mu = 1.5 * h;
        let dmu = if treated { mu } else { 0.0 };

        let alpha: f64 = StandardNormal.sample(rng);
        let e1 = shock(rng);
        let (e20, e21) = match cfg.error_kind {
            ErrorKind::Hetero => {
                let s = hetero_variance(&row).sqrt();
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                (s * a, s * b)
            }
            _ => (shock(rng), shock(rng)),
        };
        let base2 = 2.0 + 2.0 * mu + dmu + alpha;
        y1[i] = h + dmu + alpha + e1;
        y2_0[i] = base2 + e20;
        y2_1[i] = base2 + e21;
        y2[i] = if treated { y2_1[i] } else { y2_0[i] };
        d[i] = treated;
        propensity[i] = ps;
    }
    Ok(GeneratedPanel {
        panel: PanelDataset::new(y1, y2, d, x, None)?,
        y2_untreated: y2_0,
        y2_treated: y2_1,
        propensity,
    })
}

/// Draws one panel and its canonical sample.
pub fn generate_design<R: Rng + ?Sized>(cfg: &SimDesignConfig, rng: &mut R) -> Result<(PanelDataset, DiDSample)> {
    let g = generate_design_detailed(cfg, rng)?;
    let sample = to_canonical(&g.panel)?;
    Ok((g.panel, sample))
}

/// Runs replication `rep`: data from the `Data` substream indexed by `rep`,
/// estimator seed derived from the `Estimators` substream. If the data are
/// unusable every method fails for this replication.
pub fn run_replication(cfg: &SimDesignConfig, rep: usize, methods: &[Method]) -> Vec<MethodOutcome> {
    let mut rng = indexed_substream(cfg.seed, Substream::Data, rep as u64);
    let outcomes = generate_design(cfg, &mut rng)
        .and_then(|(panel, sample)| run_methods(&sample, Some(&panel), methods, &cfg.estimator_settings(rep)));
    match outcomes {
        Ok(o) => o,
        Err(e) => {
            let msg = format!("replication {rep}: {e}");
            methods.iter().map(|_| Err(msg.clone())).collect()
        }
    }
}

/// Summary of one method over the replications of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    /// Mean estimate minus the true ATT of zero.
    pub bias: f64,
    /// Share of intervals covering zero.
    pub cp: f64,
    /// Mean interval length.
    pub cil: f64,
    /// `sqrt(cp (1 - cp) / reps_ok)`.
    pub mc_se: f64,
    pub reps_ok: usize,
    pub failures: usize,
    /// False when more than 1% of replications failed.
    pub valid: bool,
}

impl MethodMetrics {
    /// Aggregates per-replication outcomes of one method.
    pub fn from_outcomes<'a>(method: Method, outcomes: impl IntoIterator<Item = &'a MethodOutcome>) -> Self {
        let (mut ok, mut failures) = (0usize, 0usize);
        let (mut est, mut cover, mut len) = (0.0, 0usize, 0.0);
        for o in outcomes {
            match o {
                Ok(e) => {
                    ok += 1;
                    est += e.estimate;
                    cover += usize::from(e.covers(0.0));
                    len += e.ci_length();
                }
                Err(_) => failures += 1,
            }
        }
        let total = ok + failures;
        let (bias, cp, cil) = if ok == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let k = ok as f64;
            (est / k, cover as f64 / k, len / k)
        };
        Self {
            method,
            bias,
            cp,
            cil,
            mc_se: (cp * (1.0 - cp) / ok as f64).sqrt(),
            reps_ok: ok,
            failures,
            valid: ok > 0 && (failures as f64) <= 0.01 * total as f64,
        }
    }
}

/// Metrics of one Monte Carlo cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCMetrics {
    pub config: SimDesignConfig,
    pub methods: Vec<MethodMetrics>,
}

impl MCMetrics {
    pub fn get(&self, method: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Per-replication outcomes for the replications in `reps`, in that order.
pub fn run_replications(cfg: &SimDesignConfig, methods: &[Method], reps: &[usize]) -> Vec<Vec<MethodOutcome>> {
    reps.par_iter().map(|&r| run_replication(cfg, r, methods)).collect()
}

/// Aggregates the output of [`run_replications`].
pub fn aggregate(cfg: &SimDesignConfig, methods: &[Method], records: &[Vec<MethodOutcome>]) -> MCMetrics {
    MCMetrics {
        config: cfg.clone(),
        methods: methods
            .iter()
            .enumerate()
            .map(|(k, &m)| MethodMetrics::from_outcomes(m, records.iter().map(|r| &r[k])))
            .collect(),
    }
}

/// Runs `cfg.reps` replications in parallel on the current rayon pool and
/// aggregates them in replication order.
pub fn run_monte_carlo(cfg: &SimDesignConfig, methods: &[Method]) -> Result<MCMetrics> {
    cfg.validate()?;
    let reps: Vec<usize> = (0..cfg.reps).collect();
    let records = run_replications(cfg, methods, &reps);
    Ok(aggregate(cfg, methods, &records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::MethodEstimate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(design: Design, error_kind: ErrorKind) -> SimDesignConfig {
        SimDesignConfig {
            design,
            n: 100_000,
            p: 5,
            error_kind,
            ..SimDesignConfig::default()
        }
    }

    #[test]
    fn covariance_entries() {
        let s = covariate_covariance(5);
        assert_eq!(s[(0, 2)], 0.25);
        assert_eq!(s[(3, 3)], 1.0);
        assert_eq!(s[(4, 0)], 0.0625);
    }

    #[test]
    fn design_one_selection_at_the_mean() {
        let x = [1.0, -1.0, 1.0, -1.0, 1.0];
        let g = selection_index(Design::I, false, &x);
        assert!((g - 0.5 * (1.0 - 0.5 + 1.0 / 3.0 - 0.25 + 0.2)).abs() < 1e-15);
        assert!((g - 0.391_666_666_666_666_7).abs() < 1e-12);
        assert!((selection_index(Design::III, false, &x) - (0.5 * (47.0 / 60.0) + 0.5 * (137.0 / 60.0)) / 4.0).abs() < 1e-12);
        assert!((selection_index(Design::I, true, &x) - 47.0 / 60.0).abs() < 1e-12);
        assert!((outcome_index(Design::II, &x) - (0.8 * 47.0 / 60.0 + 0.2 * 137.0 / 60.0)).abs() < 1e-12);
        assert_eq!(hetero_variance(&x), 0.0);
    }

    #[test]
    fn potential_outcome_difference_has_zero_mean() {
        for kind in [ErrorKind::Normal, ErrorKind::Chisq3, ErrorKind::Hetero] {
            let cfg = small(Design::IV, kind);
            let g = generate_design_detailed(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            let diff: Vec<f64> = g.y2_treated.iter().zip(&g.y2_untreated).map(|(a, b)| a - b).collect();
            let n = diff.len() as f64;
            let mean = diff.iter().sum::<f64>() / n;
            let var = diff.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 4.0 * (var / n).sqrt(), "{kind}: mean {mean}");
        }
    }

    #[test]
    fn chisq3_shocks_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..100_000).map(|_| chisq3_shock(&mut rng)).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 * (var / n).sqrt());
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn treated_share_is_stable_across_seeds() {
        let cfg = small(Design::I, ErrorKind::Normal);
        let shares: Vec<f64> = (0..3)
            .map(|s| {
                let g = generate_design_detailed(&cfg, &mut ChaCha8Rng::seed_from_u64(100 + s)).unwrap();
                g.panel.d.iter().filter(|&&d| d).count() as f64 / cfg.n as f64
            })
            .collect();
        let m = shares.iter().sum::<f64>() / 3.0;
        let se = (m * (1.0 - m) / cfg.n as f64).sqrt();
        for s in &shares {
            assert!((s - m).abs() < 3.0 * se * 2f64.sqrt(), "{shares:?}");
        }
        // the Design I index 0.5 w'X is normal; integrate the logistic over it
        let w: Vec<f64> = (1..=5).map(|j| 0.5 / j as f64).collect();
        let s = covariate_covariance(5);
        let mean: f64 = w.iter().enumerate().map(|(j, wj)| wj * covariate_mean(j)).sum();
        let var: f64 = (0..5).flat_map(|j| (0..5).map(move |k| (j, k))).map(|(j, k)| w[j] * w[k] * s[(j, k)]).sum();
        let steps = 20_000;
        let expected: f64 = (0..steps)
            .map(|i| {
                let z = -10.0 + 20.0 * (i as f64 + 0.5) / steps as f64;
                let dens = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                logistic(mean + var.sqrt() * z) * dens * 20.0 / steps as f64
            })
            .sum();
        assert!((m - expected).abs() < 3.0 * se, "share {m}, expected {expected}");
    }

    #[test]
    fn outcome_change_has_the_stated_conditional_mean() {
        let cfg = SimDesignConfig { n: 2000, ..SimDesignConfig::default() };
        let g = generate_design_detailed(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let resid: f64 = (0..cfg.n)
            .map(|i| {
                let row: Vec<f64> = (0..cfg.p).map(|j| g.panel.x[(i, j)]).collect();
                g.panel.y2[i] - g.panel.y1[i] - 2.0 - 2.0 * outcome_index(cfg.design, &row)
            })
            .sum::<f64>()
            / cfg.n as f64;
        // noise e2 - e1 has variance 2
        assert!(resid.abs() < 4.0 * (2.0 / cfg.n as f64).sqrt());
    }

    fn fake(estimate: f64, lo: f64, hi: f64) -> MethodOutcome {
        Ok(MethodEstimate {
            method: Method::Or,
            estimate,
            ci_low: lo,
            ci_high: hi,
            std_err: None,
        })
    }

    #[test]
    fn metrics_from_outcomes() {
        let one = MethodMetrics::from_outcomes(Method::Or, &[fake(0.3, 0.1, 0.5)]);
        assert_eq!(one.bias, 0.3);
        assert_eq!(one.cp, 0.0);
        assert_eq!(one.mc_se, 0.0);

        let mut rows: Vec<MethodOutcome> = (0..99).map(|i| fake(0.01 * i as f64, -1.0, 1.0 + i as f64)).collect();
        rows.push(Err("boom".into()));
        let m = MethodMetrics::from_outcomes(Method::Or, &rows);
        assert_eq!((m.reps_ok, m.failures), (99, 1));
        assert!(m.valid);
        assert_eq!(m.cp, 1.0);
        rows.push(Err("boom".into()));
        assert!(!MethodMetrics::from_outcomes(Method::Or, &rows).valid);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_exchangeable() {
        let cfg = SimDesignConfig {
            n: 120,
            p: 2,
            reps: 4,
            draws: 50,
            seed: 9,
            ..SimDesignConfig::default()
        };
        let methods = [Method::Or, Method::Dr, Method::Twfe];
        let a = run_monte_carlo(&cfg, &methods).unwrap();
        assert_eq!(a, run_monte_carlo(&cfg, &methods).unwrap());

        let fwd = run_replications(&cfg, &methods, &[0, 1, 2, 3]);
        let rev = run_replications(&cfg, &methods, &[3, 2, 1, 0]);
        let key = |v: &Vec<Vec<MethodOutcome>>| {
            let mut e: Vec<u64> = v.iter().map(|r| r[0].as_ref().unwrap().estimate.to_bits()).collect();
            e.sort_unstable();
            e
        };
        assert_eq!(key(&fwd), key(&rev));
        assert_eq!(aggregate(&cfg, &methods, &fwd), a);
    }

    #[test]
    fn parses_tags() {
        assert_eq!("iii".parse::<Design>().unwrap(), Design::III);
        assert!("V".parse::<Design>().unwrap_err().to_string().contains("I, II, III, IV"));
        assert_eq!("chisq3".parse::<ErrorKind>().unwrap(), ErrorKind::Chisq3);
        assert!(SimDesignConfig { n: 10, ..SimDesignConfig::default() }.validate().is_err());
        let full = SimDesignConfig::default().paper_scale();
        assert_eq!((full.reps, full.draws), (1000, 5000));
    }
}
