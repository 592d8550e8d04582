//! Posterior sampling for the ATT.
//!
//! [`run_algorithm1`] combines Gaussian-process posterior draws of the
//! control-arm mean with Bayesian bootstrap weights. [`run_algorithm2`]
//! additionally tilts the prior towards the propensity-based Riesz
//! representer and subtracts a posterior correction from every draw.
//!
//! Randomness comes from tagged substreams of `DRBayesConfig::seed`: the
//! mean-function draws and the bootstrap weights of both algorithms use the
//! same streams, so with a zero prior adjustment the two samplers see
//! identical `m^s` and weights draw by draw.

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::data::DiDSample;
use crate::error::{Error, Result};
use crate::gp::{
    gp_posterior, optimize_hyperparameters, sample_matrix, varsigma_rule, AdjustedKernelConfig, GPHyperParams,
    OptimizerSettings,
};
use crate::linalg::select_rows;
use crate::propensity::{fit_logistic_with_clip, RieszModel, DEFAULT_CLIP_EPS};
use crate::rng::{substream, StreamRng, Substream};

/// Redraws allowed when a bootstrap draw puts no weight on treated units.
pub const MAX_WEIGHT_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BayesMethod {
    Bayes,
    DrBayes,
}

impl BayesMethod {
    pub fn tag(self) -> &'static str {
        match self {
            BayesMethod::Bayes => "bayes",
            BayesMethod::DrBayes => "dr-bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DRBayesConfig {
    /// Posterior draws `B`.
    pub draws: usize,
    /// Multiplier of the prior-adjustment scale.
    pub c_varsigma: f64,
    /// Estimate the propensity model and pilot mean on one half of the
    /// sample and draw on the other half.
    pub sample_split: bool,
    /// Credible level is `1 - alpha`.
    pub alpha: f64,
    pub seed: u64,
    pub optimizer: OptimizerSettings,
    /// Uses this prior-adjustment scale instead of the data-driven rule.
    pub varsigma_override: Option<f64>,
    pub clip_eps: f64,
    /// Ridge penalty of the logistic propensity fit.
    pub ridge: f64,
}

impl Default for DRBayesConfig {
    fn default() -> Self {
        Self {
            draws: 5000,
            c_varsigma: 1.0,
            sample_split: false,
            alpha: 0.05,
            seed: 0,
            optimizer: OptimizerSettings::default(),
            varsigma_override: None,
            clip_eps: DEFAULT_CLIP_EPS,
            ridge: 0.0,
        }
    }
}

impl DRBayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::InvalidInput("at least one posterior draw is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.c_varsigma > 0.0 && self.c_varsigma.is_finite()) {
            return Err(Error::InvalidInput(format!("c_varsigma must be positive, got {}", self.c_varsigma)));
        }
        if let Some(v) = self.varsigma_override {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("varsigma override must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-draw pieces of the double-robust sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct DrDiagnostics {
    /// `tau^s` computed from the adjusted-prior draws before correction.
    pub uncorrected: Vec<f64>,
    /// Posterior corrections `b^s`.
    pub corrections: Vec<f64>,
    pub varsigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ATTPosterior {
    pub draws: Vec<f64>,
    pub method: BayesMethod,
    /// Posterior mean of the draws.
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub hyperparams: GPHyperParams,
    pub diagnostics: Option<DrDiagnostics>,
}

impl ATTPosterior {
    fn from_draws(
        draws: Vec<f64>,
        method: BayesMethod,
        alpha: f64,
        hyperparams: GPHyperParams,
        diagnostics: Option<DrDiagnostics>,
    ) -> Self {
        let point = draws.iter().sum::<f64>() / draws.len() as f64;
        let (ci_low, ci_high) = credible_interval(&draws, alpha);
        Self {
            draws,
            method,
            point,
            ci_low,
            ci_high,
            alpha,
            hyperparams,
            diagnostics,
        }
    }

    pub fn ci_length(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// `M_i = e_i / sum_j e_j` with `e_i ~ Exp(1)`.
pub fn bayesian_bootstrap_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample(Exp1)).collect();
    let total: f64 = e.iter().sum();
    let mut w: Vec<f64> = e.iter().map(|v| v / total).collect();
    // push the rounding residual into the largest weight
    if let Some(k) = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
        for _ in 0..2 {
            let residual = 1.0 - w.iter().sum::<f64>();
            w[k] += residual;
        }
    }
    w
}

/// `sum_i M_i D_i (dy_i - m_i) / sum_i M_i D_i`.
pub fn att_draw(weights: &[f64], d: &[bool], dy: &[f64], m_draw: &[f64]) -> Result<f64> {
    let n = weights.len();
    for found in [d.len(), dy.len(), m_draw.len()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        if d[i] {
            num += weights[i] * (dy[i] - m_draw[i]);
            den += weights[i];
        }
    }
    if den <= 0.0 {
        return Err(Error::DegenerateDraw(0));
    }
    Ok(num / den)
}

/// Row means of an `n x B` matrix of mean-function draws, accumulated as
/// deviations from the first draw so identical draws average to themselves.
pub fn pilot_mhat(draws: MatRef<'_, f64>) -> Vec<f64> {
    let b = draws.ncols() as f64;
    (0..draws.nrows())
        .map(|i| {
            let first = draws[(i, 0)];
            first + (0..draws.ncols()).map(|s| draws[(i, s)] - first).sum::<f64>() / b
        })
        .collect()
}

/// `(1/n) sum_i gamma(D_i, X_i) (mhat - m^s)(X_i)` over every unit.
pub fn correction_term(riesz: &RieszModel, d: &[bool], x: MatRef<'_, f64>, mhat: &[f64], m_draw: &[f64]) -> f64 {
    let gamma = riesz.riesz_rows(d, x);
    correction_from_gamma(&gamma, mhat, m_draw)
}

fn correction_from_gamma(gamma: &[f64], mhat: &[f64], m_draw: &[f64]) -> f64 {
    let n = gamma.len() as f64;
    gamma
        .iter()
        .zip(mhat.iter().zip(m_draw))
        .map(|(g, (a, b))| g * (a - b))
        .sum::<f64>()
        / n
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval `(q(alpha/2), q(1 - alpha/2))` using linearly
/// interpolated order statistics (Hyndman-Fan type 7).
pub fn credible_interval(draws: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!draws.is_empty(), "credible interval of an empty sample");
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    (quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0))
}

/// Draws of `tau^s` for every column of `m`, with bootstrap weights from
/// `rng`. A draw with no treated mass is redrawn.
fn tau_draws(rng: &mut StreamRng, d: &[bool], dy: &[f64], m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let n = d.len();
    (0..m.ncols())
        .map(|s| {
            let col = m.col(s);
            let m_s: Vec<f64> = (0..n).map(|i| col[i]).collect();
            for _ in 0..=MAX_WEIGHT_REDRAWS {
                let w = bayesian_bootstrap_weights(n, rng);
                match att_draw(&w, d, dy, &m_s) {
                    Err(Error::DegenerateDraw(_)) => continue,
                    other => return other,
                }
            }
            Err(Error::DegenerateDraw(MAX_WEIGHT_REDRAWS))
        })
        .collect()
}

fn control_data(sample: &DiDSample) -> (Mat<f64>, Vec<f64>, Vec<usize>) {
    let rows = sample.control_indices();
    let x0 = select_rows(sample.x.as_ref(), &rows);
    let y0 = rows.iter().map(|&i| sample.dy[i]).collect();
    (x0, y0, rows)
}

/// Hyperparameters and unadjusted posterior draws of the control-arm mean,
/// shareable between the two samplers on the same sample and seed.
#[derive(Debug, Clone)]
pub struct ControlFit {
    pub hyperparams: GPHyperParams,
    /// `n x B` unadjusted draws at every unit.
    pub draws: Mat<f64>,
    seed: u64,
}

impl ControlFit {
    pub fn new(sample: &DiDSample, cfg: &DRBayesConfig) -> Result<Self> {
        cfg.validate()?;
        let (x0, y0, _) = control_data(sample);
        let h = optimize_hyperparameters(x0.as_ref(), &y0, &cfg.optimizer)?;
        let post = gp_posterior(&h, x0.as_ref(), &y0, sample.x.as_ref(), None)?;
        let draws = sample_matrix(&post, cfg.draws, &mut substream(cfg.seed, Substream::MeanDraws));
        Ok(Self {
            hyperparams: h,
            draws,
            seed: cfg.seed,
        })
    }

    fn check(&self, sample: &DiDSample, cfg: &DRBayesConfig) -> Result<()> {
        if self.draws.nrows() != sample.n() || self.draws.ncols() != cfg.draws || self.seed != cfg.seed {
            return Err(Error::InvalidInput("control fit was built for a different sample or configuration".into()));
        }
        Ok(())
    }
}

/// Standard Gaussian-process sampler.
pub fn run_algorithm1(sample: &DiDSample, cfg: &DRBayesConfig) -> Result<ATTPosterior> {
    let fit = ControlFit::new(sample, cfg)?;
    algorithm1_from_fit(sample, cfg, &fit)
}

pub fn algorithm1_from_fit(sample: &DiDSample, cfg: &DRBayesConfig, fit: &ControlFit) -> Result<ATTPosterior> {
    fit.check(sample, cfg)?;
    let mut wrng = substream(cfg.seed, Substream::Weights);
    let tau = tau_draws(&mut wrng, &sample.d, &sample.dy, fit.draws.as_ref())?;
    Ok(ATTPosterior::from_draws(tau, BayesMethod::Bayes, cfg.alpha, fit.hyperparams.clone(), None))
}

/// Double-robust sampler with prior adjustment and posterior correction.
pub fn run_algorithm2(sample: &DiDSample, cfg: &DRBayesConfig) -> Result<ATTPosterior> {
    if cfg.sample_split {
        return algorithm2_split(sample, cfg);
    }
    let fit = ControlFit::new(sample, cfg)?;
    algorithm2_from_fit(sample, cfg, &fit)
}

/// Both samplers on one sample, sharing hyperparameters and pilot draws.
pub fn run_both(sample: &DiDSample, cfg: &DRBayesConfig) -> Result<(ATTPosterior, ATTPosterior)> {
    if cfg.sample_split {
        return Ok((run_algorithm1(sample, cfg)?, algorithm2_split(sample, cfg)?));
    }
    let fit = ControlFit::new(sample, cfg)?;
    Ok((algorithm1_from_fit(sample, cfg, &fit)?, algorithm2_from_fit(sample, cfg, &fit)?))
}

fn varsigma_for(cfg: &DRBayesConfig, nu: f64, gamma0: &[f64], d: &[bool]) -> Result<f64> {
    match cfg.varsigma_override {
        Some(v) => Ok(v),
        None => varsigma_rule(nu, gamma0, d, cfg.c_varsigma),
    }
}

pub fn algorithm2_from_fit(sample: &DiDSample, cfg: &DRBayesConfig, fit: &ControlFit) -> Result<ATTPosterior> {
    fit.check(sample, cfg)?;
    if cfg.sample_split {
        return algorithm2_split(sample, cfg);
    }
    let riesz = fit_logistic_with_clip(sample.x.as_ref(), &sample.d, cfg.ridge, cfg.clip_eps)?;
    let mhat = pilot_mhat(fit.draws.as_ref());
    let (x0, y0, rows) = control_data(sample);
    let h = &fit.hyperparams;
    let gamma0 = riesz.riesz_control_rows(sample.x.as_ref());
    let varsigma = varsigma_for(cfg, h.nu, &gamma0, &sample.d)?;

    let adjusted = if varsigma == 0.0 {
        // the adjusted prior is the unadjusted one and so are its draws
        fit.draws.clone()
    } else {
        let kc = AdjustedKernelConfig::for_rows(varsigma, gamma0, &rows)?;
        let post = gp_posterior(h, x0.as_ref(), &y0, sample.x.as_ref(), Some(&kc))?;
        sample_matrix(&post, cfg.draws, &mut substream(cfg.seed, Substream::MeanDraws))
    };
    let gamma = riesz.riesz_rows(&sample.d, sample.x.as_ref());
    finish_dr(sample, cfg, h.clone(), &adjusted, &mhat, &gamma, varsigma)
}

fn finish_dr(
    sample: &DiDSample,
    cfg: &DRBayesConfig,
    h: GPHyperParams,
    adjusted: &Mat<f64>,
    mhat: &[f64],
    gamma: &[f64],
    varsigma: f64,
) -> Result<ATTPosterior> {
    let mut wrng = substream(cfg.seed, Substream::Weights);
    let tau = tau_draws(&mut wrng, &sample.d, &sample.dy, adjusted.as_ref())?;
    let n = sample.n();
    let corrections: Vec<f64> = (0..adjusted.ncols())
        .map(|s| {
            let col = adjusted.col(s);
            let m_s: Vec<f64> = (0..n).map(|i| col[i]).collect();
            correction_from_gamma(gamma, mhat, &m_s)
        })
        .collect();
    let draws = tau.iter().zip(&corrections).map(|(t, b)| t - b).collect();
    Ok(ATTPosterior::from_draws(
        draws,
        BayesMethod::DrBayes,
        cfg.alpha,
        h,
        Some(DrDiagnostics {
            uncorrected: tau,
            corrections,
            varsigma,
        }),
    ))
}

/// Seeded 50/50 split of `0..n` into `(auxiliary, estimation)` halves, each
/// in increasing order.
pub fn split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, Substream::Split));
    let (a, e) = idx.split_at(n / 2);
    let (mut a, mut e) = (a.to_vec(), e.to_vec());
    a.sort_unstable();
    e.sort_unstable();
    (a, e)
}

/// Sample-splitting variant: the propensity model and the pilot mean come
/// from the auxiliary half, the adjusted posterior draws, bootstrap weights
/// and corrections from the estimation half. Hyperparameters are selected on
/// the estimation-half controls and reused for the pilot posterior; the
/// treated share stays the full-sample share.
fn algorithm2_split(sample: &DiDSample, cfg: &DRBayesConfig) -> Result<ATTPosterior> {
    cfg.validate()?;
    let (aux_rows, est_rows) = split_halves(sample.n(), cfg.seed);
    let aux = sample
        .subset(&aux_rows)
        .map_err(|e| Error::UnusableSample(format!("auxiliary half: {e}")))?;
    let est = sample
        .subset(&est_rows)
        .map_err(|e| Error::UnusableSample(format!("estimation half: {e}")))?;

    let riesz = fit_logistic_with_clip(aux.x.as_ref(), &aux.d, cfg.ridge, cfg.clip_eps)?
        .with_pi_hat(sample.treated_share())?;
    let (x0e, y0e, rows_e) = control_data(&est);
    let h = optimize_hyperparameters(x0e.as_ref(), &y0e, &cfg.optimizer)?;

    let (x0a, y0a, _) = control_data(&aux);
    let pilot_post = gp_posterior(&h, x0a.as_ref(), &y0a, est.x.as_ref(), None)?;
    let pilot = sample_matrix(&pilot_post, cfg.draws, &mut substream(cfg.seed, Substream::MeanDraws));
    let mhat = pilot_mhat(pilot.as_ref());

    let gamma0 = riesz.riesz_control_rows(est.x.as_ref());
    let varsigma = varsigma_for(cfg, h.nu, &gamma0, &est.d)?;
    let kc = AdjustedKernelConfig::for_rows(varsigma, gamma0, &rows_e)?;
    let post = gp_posterior(&h, x0e.as_ref(), &y0e, est.x.as_ref(), Some(&kc))?;
    let adjusted = sample_matrix(&post, cfg.draws, &mut substream(cfg.seed, Substream::MeanDraws));
    let gamma = riesz.riesz_rows(&est.d, est.x.as_ref());
    finish_dr(&est, cfg, h, &adjusted, &mhat, &gamma, varsigma)
}
