use faer::{Mat, MatRef};

use super::kernel::{add_rank_one, cross_gram};
use super::{AdjustedKernelConfig, GPHyperParams};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, JitteredCholesky};

/// Partial derivatives of the log evidence in the natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceGradient {
    pub mu: f64,
    pub nu: f64,
    pub lengthscale_rates: Vec<f64>,
    pub sigma: f64,
}

struct Fit {
    base: Mat<f64>,
    chol: JitteredCholesky,
    alpha: Vec<f64>,
    value: f64,
}

fn fit(h: &GPHyperParams, x0: MatRef<'_, f64>, y0: &[f64], cfg: Option<&AdjustedKernelConfig>) -> Result<Fit> {
    let n = x0.nrows();
    if y0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y0.len() });
    }
    if n == 0 {
        return Err(Error::UnusableSample("no training points".into()));
    }
    let base = cross_gram(h, x0, x0)?;
    let mut ky = base.clone();
    if let Some(cfg) = cfg.filter(|c| c.is_active()) {
        if cfg.gamma_train.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cfg.gamma_train.len(),
            });
        }
        add_rank_one(&mut ky, cfg.varsigma, &cfg.gamma_train, &cfg.gamma_train);
    }
    let s2 = h.sigma * h.sigma;
    for i in 0..n {
        ky[(i, i)] += s2;
    }
    let chol = cholesky_jittered(ky.as_ref())?;
    let r: Vec<f64> = y0.iter().map(|y| y - h.mu).collect();
    let alpha = chol.solve_vec(&r);
    let quad: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = -0.5 * quad - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(Fit { base, chol, alpha, value })
}

/// Gaussian log evidence of the control outcomes `y0` at covariates `x0`
/// under the (optionally adjusted) kernel plus `sigma^2 I`.
pub fn log_marginal_likelihood(
    h: &GPHyperParams,
    x0: MatRef<'_, f64>,
    y0: &[f64],
    cfg: Option<&AdjustedKernelConfig>,
) -> Result<f64> {
    Ok(fit(h, x0, y0, cfg)?.value)
}

/// Log evidence together with its analytic gradient. The adjustment term is
/// held fixed, so only the base kernel depends on `nu` and the rates.
pub fn log_marginal_likelihood_with_gradient(
    h: &GPHyperParams,
    x0: MatRef<'_, f64>,
    y0: &[f64],
    cfg: Option<&AdjustedKernelConfig>,
) -> Result<(f64, EvidenceGradient)> {
    let Fit { base, chol, alpha, value } = fit(h, x0, y0, cfg)?;
    let n = x0.nrows();
    let p = h.p();
    // dL/dtheta = 1/2 tr(Q dK/dtheta) with Q = alpha alpha^T - K_y^{-1}
    let inv = chol.inverse();
    let mut g_nu = 0.0;
    let mut g_rates = vec![0.0; p];
    let mut trace_q = 0.0;
    for j in 0..n {
        for i in 0..n {
            let q = alpha[i] * alpha[j] - inv[(i, j)];
            if i == j {
                trace_q += q;
            }
            let qk = q * base[(i, j)];
            g_nu += qk;
            if i != j {
                for (l, gl) in g_rates.iter_mut().enumerate() {
                    let diff = x0[(i, l)] - x0[(j, l)];
                    *gl -= qk * diff * diff;
                }
            }
        }
    }
    let grad = EvidenceGradient {
        mu: alpha.iter().sum(),
        nu: g_nu / h.nu,
        lengthscale_rates: g_rates
            .iter()
            .zip(&h.lengthscale_rates)
            .map(|(g, a)| 0.5 * g * a)
            .collect(),
        sigma: h.sigma * trace_q,
    };
    Ok((value, grad))
}
