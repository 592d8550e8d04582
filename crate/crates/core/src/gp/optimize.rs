use faer::MatRef;

use super::evidence::log_marginal_likelihood_with_gradient;
use super::GPHyperParams;
use crate::error::{Error, Result};
use crate::optim::{minimize, Bounds};

/// Multi-start settings for evidence maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    /// Number of start points taken from the fixed start grid (at most 8).
    pub starts: usize,
    /// Iteration cap for the local run from each start.
    pub start_iterations: usize,
    /// Iteration cap for the final polish from the best start.
    pub max_iterations: usize,
    /// Stopping tolerance on the projected gradient of the per-observation
    /// negative log evidence in log-parameter space.
    pub tolerance: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            starts: 5,
            start_iterations: 20,
            max_iterations: 200,
            tolerance: 1e-6,
        }
    }
}

/// Outcome of [`optimize_hyperparameters_detailed`].
#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub params: GPHyperParams,
    pub log_evidence: f64,
    /// Log evidence at each start point; `None` where factorization failed.
    pub start_values: Vec<Option<f64>>,
    pub starts: Vec<GPHyperParams>,
    pub lower: GPHyperParams,
    pub upper: GPHyperParams,
}

/// `(nu / s_y, a_l * s_l, sigma / s_y)` start grid.
const START_GRID: [(f64, f64, f64); 8] = [
    (1.0, 1.0, 0.5),
    (0.5, 0.3, 0.8),
    (2.0, 3.0, 0.2),
    (1.0, 0.1, 0.5),
    (0.3, 1.0, 0.9),
    (1.0, 3.0, 0.1),
    (0.5, 0.05, 0.95),
    (3.0, 0.5, 0.3),
];

fn sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn scale_or_one(s: f64, level: f64) -> f64 {
    if s.is_finite() && s > 1e-12 * (1.0 + level.abs()) {
        s
    } else {
        1.0
    }
}

/// Parameter vector `(mu, ln nu, ln a_1.., ln sigma)`.
fn pack(h: &GPHyperParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(h.p() + 3);
    v.push(h.mu);
    v.push(h.nu.ln());
    v.extend(h.lengthscale_rates.iter().map(|a| a.ln()));
    v.push(h.sigma.ln());
    v
}

fn unpack(v: &[f64]) -> GPHyperParams {
    let p = v.len() - 3;
    GPHyperParams {
        mu: v[0],
        nu: v[1].exp(),
        lengthscale_rates: v[2..2 + p].iter().map(|a| a.exp()).collect(),
        sigma: v[2 + p].exp(),
    }
}

/// Maximizes the unadjusted log evidence over `(mu, nu, a, sigma)`.
pub fn optimize_hyperparameters(x0: MatRef<'_, f64>, y0: &[f64], opts: &OptimizerSettings) -> Result<GPHyperParams> {
    optimize_hyperparameters_detailed(x0, y0, opts).map(|r| r.params)
}

/// As [`optimize_hyperparameters`], also returning the start points, their
/// evidence and the search box.
///
/// The search runs in log space for the positive parameters inside a box
/// scaled by the data: with `s_y` the standard deviation of `y0` and `s_l`
/// that of covariate `l`, `nu` ranges over `[1e-3, 1e2] s_y`, `sigma` over
/// `[1e-3, 10] s_y`, `a_l` over `[1e-3, 1e2] / s_l` and `mu` over
/// `mean(y0) +- 100 s_y`. Each start is refined briefly and the best one is
/// polished.
pub fn optimize_hyperparameters_detailed(
    x0: MatRef<'_, f64>,
    y0: &[f64],
    opts: &OptimizerSettings,
) -> Result<OptimizationReport> {
    let n = x0.nrows();
    if y0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y0.len() });
    }
    if n < 2 {
        return Err(Error::UnusableSample(format!("hyperparameter selection needs 2 training points, got {n}")));
    }
    if opts.starts == 0 {
        return Err(Error::InvalidInput("at least one optimizer start is required".into()));
    }
    let p = x0.ncols();
    let (ybar, sy) = sd(y0.iter().copied());
    let sy = scale_or_one(sy, ybar);
    let sx: Vec<f64> = (0..p)
        .map(|l| {
            let (m, s) = sd((0..n).map(move |i| x0[(i, l)]));
            scale_or_one(s, m)
        })
        .collect();

    let lower = GPHyperParams {
        mu: ybar - 100.0 * sy,
        nu: 1e-3 * sy,
        lengthscale_rates: sx.iter().map(|s| 1e-3 / s).collect(),
        sigma: 1e-3 * sy,
    };
    let upper = GPHyperParams {
        mu: ybar + 100.0 * sy,
        nu: 1e2 * sy,
        lengthscale_rates: sx.iter().map(|s| 1e2 / s).collect(),
        sigma: 10.0 * sy,
    };
    let bounds = Bounds {
        lower: pack(&lower),
        upper: pack(&upper),
    };

    let scale = n as f64;
    let objective = |v: &[f64]| -> Option<(f64, Vec<f64>)> {
        let h = unpack(v);
        let (value, g) = log_marginal_likelihood_with_gradient(&h, x0, y0, None).ok()?;
        // chain rule into log space, negate and normalize by n
        let mut grad = Vec::with_capacity(v.len());
        grad.push(-g.mu / scale);
        grad.push(-g.nu * h.nu / scale);
        grad.extend(g.lengthscale_rates.iter().zip(&h.lengthscale_rates).map(|(g, a)| -g * a / scale));
        grad.push(-g.sigma * h.sigma / scale);
        if grad.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((-value / scale, grad))
    };

    let starts: Vec<GPHyperParams> = START_GRID
        .iter()
        .take(opts.starts.min(START_GRID.len()))
        .map(|&(nu, a, sigma)| GPHyperParams {
            mu: ybar,
            nu: nu * sy,
            lengthscale_rates: sx.iter().map(|s| a / s).collect(),
            sigma: sigma * sy,
        })
        .collect();

    let mut start_values = Vec::with_capacity(starts.len());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        let v0 = pack(start);
        start_values.push(objective(&v0).map(|(f, _)| -f * scale));
        if let Some(m) = minimize(objective, &v0, &bounds, opts.start_iterations, opts.tolerance) {
            if best.as_ref().is_none_or(|(f, _)| m.value < *f) {
                best = Some((m.value, m.x));
            }
        }
    }
    let Some((_, x_best)) = best else {
        return Err(Error::Conditioning("evidence could not be evaluated at any optimizer start".into()));
    };
    let polished = minimize(objective, &x_best, &bounds, opts.max_iterations, opts.tolerance)
        .expect("best start point was evaluable");
    Ok(OptimizationReport {
        params: unpack(&polished.x),
        log_evidence: -polished.value * scale,
        start_values,
        starts,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{cross_gram, log_marginal_likelihood};
    use crate::linalg::cholesky_jittered;
    use faer::Mat;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gp_sample(n: usize, seed: u64) -> (Mat<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, 1, |i, _| -3.0 + 6.0 * i as f64 / (n - 1) as f64);
        let h = GPHyperParams::new(0.0, 1.0, vec![1.0], 0.1).unwrap();
        let k = cross_gram(&h, x.as_ref(), x.as_ref()).unwrap();
        let l = cholesky_jittered(k.as_ref()).unwrap();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = (0..n)
            .map(|i| {
                let f: f64 = (0..=i).map(|j| l.l()[(i, j)] * z[j]).sum();
                let e: f64 = StandardNormal.sample(&mut rng);
                f + 0.1 * e
            })
            .collect();
        (x, y)
    }

    #[test]
    fn recovers_noise_level() {
        let (x, y) = gp_sample(200, 1);
        let r = optimize_hyperparameters_detailed(x.as_ref(), &y, &OptimizerSettings::default()).unwrap();
        let s = r.params.sigma;
        assert!((0.05..=0.2).contains(&s), "sigma = {s}");
        for v in r.start_values.iter().flatten() {
            assert!(r.log_evidence >= *v);
        }
        let direct = log_marginal_likelihood(&r.params, x.as_ref(), &y, None).unwrap();
        assert!((direct - r.log_evidence).abs() < 1e-8 * direct.abs());
    }

    #[test]
    fn constant_outcome_pushes_amplitude_to_its_floor() {
        let x = Mat::from_fn(30, 2, |i, j| ((i * (j + 3)) % 7) as f64);
        let y = vec![2.5; 30];
        let r = optimize_hyperparameters_detailed(x.as_ref(), &y, &OptimizerSettings::default()).unwrap();
        let h = &r.params;
        let within = |v: f64, lo: f64, hi: f64| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        assert!(within(h.nu, r.lower.nu, r.upper.nu));
        assert!(within(h.sigma, r.lower.sigma, r.upper.sigma));
        for (a, (lo, hi)) in h.lengthscale_rates.iter().zip(r.lower.lengthscale_rates.iter().zip(&r.upper.lengthscale_rates)) {
            assert!(*a >= lo * (1.0 - 1e-12) && *a <= hi * (1.0 + 1e-12));
        }
        assert!(h.nu <= 1.01 * r.lower.nu, "nu = {} floor = {}", h.nu, r.lower.nu);
    }

    #[test]
    fn rejects_tiny_inputs() {
        let x = Mat::from_fn(1, 1, |_, _| 0.0);
        assert!(optimize_hyperparameters(x.as_ref(), &[1.0], &OptimizerSettings::default()).is_err());
    }
}
