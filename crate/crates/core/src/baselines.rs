//! Frequentist comparison estimators with influence-function standard errors.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{DiDSample, PanelDataset};
use crate::error::{Error, Result};
use crate::linalg::{inverse_spd, least_squares, select_rows, with_intercept};
use crate::propensity::RieszModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequentistMethod {
    Or,
    Dr,
    IpwHt,
    IpwHajek,
    Twfe,
}

impl FrequentistMethod {
    pub fn tag(self) -> &'static str {
        match self {
            FrequentistMethod::Or => "or",
            FrequentistMethod::Dr => "dr",
            FrequentistMethod::IpwHt => "ipw-ht",
            FrequentistMethod::IpwHajek => "ipw-hajek",
            FrequentistMethod::Twfe => "twfe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequentistResult {
    pub estimate: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: FrequentistMethod,
}

/// `z_{1 - alpha/2}` of the standard normal.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

impl FrequentistResult {
    /// Result with a symmetric 95% normal interval.
    pub fn new(method: FrequentistMethod, estimate: f64, std_err: f64) -> Self {
        Self::with_alpha(method, estimate, std_err, 0.05)
    }

    /// Result with a symmetric `1 - alpha` normal interval.
    pub fn with_alpha(method: FrequentistMethod, estimate: f64, std_err: f64, alpha: f64) -> Self {
        let half = normal_quantile(alpha) * std_err;
        Self {
            estimate,
            std_err,
            ci_low: estimate - half,
            ci_high: estimate + half,
            method,
        }
    }

    /// Same estimate and standard error at another level.
    pub fn at_level(&self, alpha: f64) -> Self {
        Self::with_alpha(self.method, self.estimate, self.std_err, alpha)
    }

    pub fn ci_length(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// `sd(psi) / sqrt(n)` with the `n - 1` variance denominator.
fn if_std_err(psi: &[f64]) -> f64 {
    let n = psi.len() as f64;
    let mean = psi.iter().sum::<f64>() / n;
    let var = psi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (var / n).sqrt()
}

fn matvec(a: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * v[j]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear regression of `dy` on `(1, x)` over the control arm, evaluated at
/// every unit. Returns the fitted values and the coefficients.
pub fn control_ols(sample: &DiDSample) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = sample.control_indices();
    let k = sample.p() + 1;
    if rows.len() <= k {
        return Err(Error::RankDeficient(format!(
            "{} control units cannot identify {k} regression coefficients",
            rows.len()
        )));
    }
    let z = with_intercept(sample.x.as_ref());
    let z0 = select_rows(z.as_ref(), &rows);
    let y0: Vec<f64> = rows.iter().map(|&i| sample.dy[i]).collect();
    let beta = least_squares(z0.as_ref(), &y0).map_err(|_| {
        Error::RankDeficient("control-arm covariate matrix is rank deficient".into())
    })?;
    Ok((matvec(z.as_ref(), &beta), beta))
}

/// Outcome-regression imputation: the treated mean of `dy - m(x)` with `m`
/// linear and fitted on the controls. The standard error accounts for the
/// estimation of `m`.
pub fn or_estimator(sample: &DiDSample) -> Result<FrequentistResult> {
    let (mhat, _) = control_ols(sample)?;
    let n = sample.n();
    let nf = n as f64;
    let d = sample.d_f64();
    let z = with_intercept(sample.x.as_ref());
    let k = z.ncols();
    let p1 = d.iter().sum::<f64>() / nf;

    let eta_treat = (0..n).map(|i| d[i] * sample.dy[i]).sum::<f64>() / nf / p1;
    let eta_cont = (0..n).map(|i| d[i] * mhat[i]).sum::<f64>() / nf / p1;
    let estimate = eta_treat - eta_cont;

    // OLS linear representation on the controls
    let gram = Mat::from_fn(k, k, |a, b| (0..n).map(|i| (1.0 - d[i]) * z[(i, a)] * z[(i, b)]).sum::<f64>() / nf);
    let gram_inv = inverse_spd(gram.as_ref(), "control-arm covariate matrix is rank deficient")?;
    let m1: Vec<f64> = (0..k).map(|a| (0..n).map(|i| d[i] * z[(i, a)]).sum::<f64>() / nf).collect();
    let lever = matvec(gram_inv.as_ref(), &m1);

    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let inf_treat = d[i] * (sample.dy[i] - eta_treat) / p1;
            let zi: Vec<f64> = (0..k).map(|a| z[(i, a)]).collect();
            let ols = (1.0 - d[i]) * (sample.dy[i] - mhat[i]) * dot(&zi, &lever);
            let inf_cont = (d[i] * (mhat[i] - eta_cont) + ols) / p1;
            inf_treat - inf_cont
        })
        .collect();
    Ok(FrequentistResult::new(FrequentistMethod::Or, estimate, if_std_err(&psi)))
}

/// `(1/n) sum_i gamma(D_i, X_i) (dy_i - mhat_i)`, with the plug-in
/// efficient influence function
/// `gamma(D, X) (dy - mhat) - (D / pi) tau` for the standard error.
pub fn dr_estimator(sample: &DiDSample, riesz: &RieszModel, mhat: &[f64]) -> Result<FrequentistResult> {
    let n = sample.n();
    if mhat.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: mhat.len() });
    }
    let gamma = riesz.riesz_rows(&sample.d, sample.x.as_ref());
    let terms: Vec<f64> = (0..n).map(|i| gamma[i] * (sample.dy[i] - mhat[i])).collect();
    let estimate = terms.iter().sum::<f64>() / n as f64;
    let psi: Vec<f64> = (0..n)
        .map(|i| terms[i] - if sample.d[i] { estimate / riesz.pi_hat } else { 0.0 })
        .collect();
    Ok(FrequentistResult::new(FrequentistMethod::Dr, estimate, if_std_err(&psi)))
}

/// Influence function of the logistic coefficients, one row per unit:
/// `H^{-1} z_i (d_i - p_i)` with `H` the average Fisher information.
fn logit_influence(sample: &DiDSample, riesz: &RieszModel, pscore: &[f64]) -> Result<Mat<f64>> {
    let n = sample.n();
    let z = with_intercept(sample.x.as_ref());
    let k = z.ncols();
    if riesz.coef.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: riesz.coef.len() });
    }
    let nf = n as f64;
    let info = Mat::from_fn(k, k, |a, b| {
        (0..n).map(|i| pscore[i] * (1.0 - pscore[i]) * z[(i, a)] * z[(i, b)]).sum::<f64>() / nf
    });
    let info_inv = inverse_spd(info.as_ref(), "logistic information matrix is singular")?;
    let d = sample.d_f64();
    let mut out = Mat::zeros(n, k);
    for i in 0..n {
        let zi: Vec<f64> = (0..k).map(|a| z[(i, a)] * (d[i] - pscore[i])).collect();
        let row = matvec(info_inv.as_ref(), &zi);
        for a in 0..k {
            out[(i, a)] = row[a];
        }
    }
    Ok(out)
}

/// Horvitz-Thompson inverse probability weighting,
/// `(1 / (n pi)) sum_i dy_i (D_i - pi(X_i)) / (1 - pi(X_i))`. The standard
/// error includes the estimation effect of the logistic coefficients.
pub fn ipw_ht(sample: &DiDSample, riesz: &RieszModel) -> Result<FrequentistResult> {
    let n = sample.n();
    let nf = n as f64;
    let pscore = riesz.propensity_rows(sample.x.as_ref());
    let d = sample.d_f64();
    let terms: Vec<f64> = (0..n)
        .map(|i| sample.dy[i] * (d[i] - pscore[i]) / ((1.0 - pscore[i]) * riesz.pi_hat))
        .collect();
    let estimate = terms.iter().sum::<f64>() / nf;

    let z = with_intercept(sample.x.as_ref());
    let k = z.ncols();
    // d tau / d beta: controls enter through -odds(x) / pi
    let grad: Vec<f64> = (0..k)
        .map(|a| {
            (0..n)
                .map(|i| {
                    let odds = pscore[i] / (1.0 - pscore[i]);
                    -(1.0 - d[i]) * odds / riesz.pi_hat * sample.dy[i] * z[(i, a)]
                })
                .sum::<f64>()
                / nf
        })
        .collect();
    let lin = logit_influence(sample, riesz, &pscore)?;
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let est_effect: f64 = (0..k).map(|a| grad[a] * lin[(i, a)]).sum();
            terms[i] - d[i] / riesz.pi_hat * estimate + est_effect
        })
        .collect();
    Ok(FrequentistResult::new(FrequentistMethod::IpwHt, estimate, if_std_err(&psi)))
}

/// `sum w1 dy / sum w1 - sum w0 dy / sum w0`.
pub fn hajek_contrast(dy: &[f64], w1: &[f64], w0: &[f64]) -> Result<f64> {
    let s1: f64 = w1.iter().sum();
    let s0: f64 = w0.iter().sum();
    if !(s1 > 0.0) {
        return Err(Error::ZeroWeightMass("treated"));
    }
    if !(s0 > 0.0) {
        return Err(Error::ZeroWeightMass("control"));
    }
    Ok(dot(w1, dy) / s1 - dot(w0, dy) / s0)
}

/// Normalized (Hajek) inverse probability weighting with treated weights
/// `D` and control weights `(1 - D) pi(X) / (1 - pi(X))`. The standard
/// error includes the estimation effect of the logistic coefficients.
pub fn ipw_hajek(sample: &DiDSample, riesz: &RieszModel) -> Result<FrequentistResult> {
    let n = sample.n();
    let nf = n as f64;
    let pscore = riesz.propensity_rows(sample.x.as_ref());
    let d = sample.d_f64();
    let w1 = d.clone();
    let w0: Vec<f64> = (0..n).map(|i| (1.0 - d[i]) * pscore[i] / (1.0 - pscore[i])).collect();
    let estimate = hajek_contrast(&sample.dy, &w1, &w0)?;

    let mean_w1 = w1.iter().sum::<f64>() / nf;
    let mean_w0 = w0.iter().sum::<f64>() / nf;
    let mu1 = dot(&w1, &sample.dy) / (mean_w1 * nf);
    let mu0 = dot(&w0, &sample.dy) / (mean_w0 * nf);
    let z = with_intercept(sample.x.as_ref());
    let k = z.ncols();
    // d mu0 / d beta, using d w0 / d beta = w0 z
    let grad: Vec<f64> = (0..k)
        .map(|a| (0..n).map(|i| w0[i] * (sample.dy[i] - mu0) * z[(i, a)]).sum::<f64>() / nf / mean_w0)
        .collect();
    let lin = logit_influence(sample, riesz, &pscore)?;
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let est_effect: f64 = (0..k).map(|a| grad[a] * lin[(i, a)]).sum();
            w1[i] * (sample.dy[i] - mu1) / mean_w1 - w0[i] * (sample.dy[i] - mu0) / mean_w0 - est_effect
        })
        .collect();
    Ok(FrequentistResult::new(FrequentistMethod::IpwHajek, estimate, if_std_err(&psi)))
}

/// Two-way fixed effects: OLS of the stacked outcomes on
/// `(1, D, t, D t, X)` over both periods, reporting the interaction
/// coefficient with a unit-clustered (CR0) standard error.
pub fn twfe(panel: &PanelDataset) -> Result<FrequentistResult> {
    let n = panel.n();
    let p = panel.p();
    let k = p + 4;
    let rows = 2 * n;
    let z = Mat::from_fn(rows, k, |r, c| {
        let (i, t) = (r % n, (r / n) as f64);
        let di = if panel.d[i] { 1.0 } else { 0.0 };
        match c {
            0 => 1.0,
            1 => di,
            2 => t,
            3 => di * t,
            _ => panel.x[(i, c - 4)],
        }
    });
    let y: Vec<f64> = panel.y1.iter().chain(&panel.y2).copied().collect();
    let beta = least_squares(z.as_ref(), &y)
        .map_err(|_| Error::RankDeficient("two-way fixed effects design is rank deficient".into()))?;
    let resid: Vec<f64> = (0..rows)
        .map(|r| y[r] - (0..k).map(|c| z[(r, c)] * beta[c]).sum::<f64>())
        .collect();
    let ztz = z.transpose() * z.as_ref();
    let bread = inverse_spd(ztz.as_ref(), "two-way fixed effects design is rank deficient")?;
    let mut meat = Mat::<f64>::zeros(k, k);
    for i in 0..n {
        let score: Vec<f64> = (0..k).map(|c| z[(i, c)] * resid[i] + z[(i + n, c)] * resid[i + n]).collect();
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += score[a] * score[b];
            }
        }
    }
    let v = bread.as_ref() * meat.as_ref() * bread.as_ref();
    Ok(FrequentistResult::new(FrequentistMethod::Twfe, beta[3], v[(3, 3)].max(0.0).sqrt()))
}
