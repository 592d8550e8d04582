use faer::{Mat, MatRef};

use super::{AdjustedKernelConfig, GPHyperParams};
use crate::error::{Error, Result};

/// `nu^2 exp(-sum_l a_l^2 (x_l - x'_l)^2 / 2)`.
pub fn se_kernel(x: &[f64], xp: &[f64], h: &GPHyperParams) -> Result<f64> {
    let p = h.p();
    for found in [x.len(), xp.len()] {
        if found != p {
            return Err(Error::DimensionMismatch { expected: p, found });
        }
    }
    let r2: f64 = x
        .iter()
        .zip(xp)
        .zip(&h.lengthscale_rates)
        .map(|((a, b), rate)| (rate * (a - b)).powi(2))
        .sum();
    Ok(h.nu * h.nu * (-0.5 * r2).exp())
}

/// `base + varsigma^2 gamma(0, x_i) gamma(0, x_j)`, indices into
/// `cfg.gamma_control`.
pub fn adjusted_kernel(i: usize, j: usize, base: f64, cfg: &AdjustedKernelConfig) -> f64 {
    let s2 = cfg.varsigma * cfg.varsigma;
    base + s2 * cfg.gamma_control[i] * cfg.gamma_control[j]
}

/// Base-kernel cross Gram `K(xa, xb)`.
pub fn cross_gram(h: &GPHyperParams, xa: MatRef<'_, f64>, xb: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let p = h.p();
    for found in [xa.ncols(), xb.ncols()] {
        if found != p {
            return Err(Error::DimensionMismatch { expected: p, found });
        }
    }
    // scale each coordinate once so the inner loop is a plain squared distance
    let scale = |x: MatRef<'_, f64>| -> Vec<Vec<f64>> {
        (0..x.nrows())
            .map(|i| (0..p).map(|l| x[(i, l)] * h.lengthscale_rates[l]).collect())
            .collect()
    };
    let (sa, sb) = (scale(xa), scale(xb));
    let nu2 = h.nu * h.nu;
    Ok(Mat::from_fn(xa.nrows(), xb.nrows(), |i, j| {
        let r2: f64 = sa[i].iter().zip(&sb[j]).map(|(u, v)| (u - v) * (u - v)).sum();
        nu2 * (-0.5 * r2).exp()
    }))
}

/// Adds `varsigma^2 ga gb^T` to `gram` in place.
pub(crate) fn add_rank_one(gram: &mut Mat<f64>, varsigma: f64, ga: &[f64], gb: &[f64]) {
    let s2 = varsigma * varsigma;
    for j in 0..gram.ncols() {
        let w = s2 * gb[j];
        for i in 0..gram.nrows() {
            gram[(i, j)] += w * ga[i];
        }
    }
}

/// Gram matrix of `K_c` over the rows of `x`, which must be the evaluation
/// rows `cfg.gamma_control` refers to. Without a configuration (or with
/// `varsigma = 0`) this is the base Gram.
pub fn adjusted_gram(h: &GPHyperParams, x: MatRef<'_, f64>, cfg: Option<&AdjustedKernelConfig>) -> Result<Mat<f64>> {
    let mut k = cross_gram(h, x, x)?;
    if let Some(cfg) = cfg.filter(|c| c.is_active()) {
        if cfg.gamma_control.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: cfg.gamma_control.len(),
            });
        }
        add_rank_one(&mut k, cfg.varsigma, &cfg.gamma_control, &cfg.gamma_control);
    }
    Ok(k)
}

/// Prior-adjustment scale
/// `c * nu * ln(n_c) / (sqrt(n_c) * Gamma_n)` with
/// `Gamma_n = sum_i |gamma(0, X_i) (1 - D_i)| / n_c`.
pub fn varsigma_rule(nu: f64, gamma_control: &[f64], d: &[bool], c_varsigma: f64) -> Result<f64> {
    if gamma_control.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            found: gamma_control.len(),
        });
    }
    let n_c = d.iter().filter(|&&t| !t).count();
    if n_c == 0 {
        return Err(Error::UnusableSample("no control units".into()));
    }
    let nc = n_c as f64;
    let big_gamma = gamma_control
        .iter()
        .zip(d)
        .filter(|(_, &t)| !t)
        .map(|(g, _)| g.abs())
        .sum::<f64>()
        / nc;
    if big_gamma == 0.0 || !big_gamma.is_finite() {
        return Err(Error::DegenerateAdjustment);
    }
    Ok(c_varsigma * nu * nc.ln() / (nc.sqrt() * big_gamma))
}
