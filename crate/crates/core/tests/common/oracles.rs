//! Independent reference computations: dense Gauss-Jordan inversion, a
//! literal Gaussian-process posterior and central finite differences.

use bayesdid::bayes::{run_algorithm1, run_algorithm2, ControlFit, DRBayesConfig};
use bayesdid::gp::{gp_posterior, log_marginal_likelihood, log_marginal_likelihood_with_gradient, AdjustedKernelConfig, GPHyperParams};
use bayesdid::propensity::fit_logistic_with_clip;
use faer::Mat;
use rand::Rng;

use super::{max_abs, random_sample, rng};

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        let pv = m[c][c];
        for v in m[c].iter_mut() {
            *v /= pv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    let pivot_row = m[c].clone();
                    for (v, pvv) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * pvv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn se(x: &[f64], y: &[f64], nu: f64, a: &[f64]) -> f64 {
    let q: f64 = x.iter().zip(y).zip(a).map(|((u, v), r)| (r * (u - v)).powi(2)).sum();
    nu * nu * (-0.5 * q).exp()
}

/// One random posterior problem with at most 12 training points and 3
/// covariates; half of them carry a prior adjustment.
pub struct GpProblem {
    pub h: GPHyperParams,
    pub x_all: Vec<Vec<f64>>,
    pub train: Vec<usize>,
    pub y0: Vec<f64>,
    pub adjustment: Option<AdjustedKernelConfig>,
}

pub fn gp_problem(seed: u64) -> GpProblem {
    let mut r = rng(seed);
    let p = r.random_range(1..=3);
    let nc = r.random_range(2..=12);
    let extra = r.random_range(0..=5);
    let n = nc + extra;
    let x_all: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let mut train: Vec<usize> = (0..n).collect();
    // scatter the training rows among the evaluation rows
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        train.swap(i, j);
    }
    train.truncate(nc);
    train.sort_unstable();
    let h = GPHyperParams::new(
        r.random_range(-1.0..1.0),
        r.random_range(0.5..2.0),
        (0..p).map(|_| r.random_range(0.3..2.0)).collect(),
        r.random_range(0.1..1.0),
    )
    .unwrap();
    let y0 = (0..nc).map(|_| r.random_range(-2.0..2.0)).collect();
    let adjustment = (seed % 2 == 1).then(|| {
        let gamma: Vec<f64> = (0..n).map(|_| -r.random_range(0.2..3.0)).collect();
        AdjustedKernelConfig::for_rows(r.random_range(0.05..1.0), gamma, &train).unwrap()
    });
    GpProblem {
        h,
        x_all,
        train,
        y0,
        adjustment,
    }
}

fn to_mat(rows: &[Vec<f64>]) -> Mat<f64> {
    let p = rows.first().map_or(0, Vec::len);
    Mat::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// Largest relative deviation of `gp_posterior` from the literal formulas
/// for mean and covariance.
pub fn gp_oracle_deviation(seed: u64) -> f64 {
    let pb = gp_problem(seed);
    let h = &pb.h;
    let x0: Vec<Vec<f64>> = pb.train.iter().map(|&i| pb.x_all[i].clone()).collect();
    let post = gp_posterior(h, to_mat(&x0).as_ref(), &pb.y0, to_mat(&pb.x_all).as_ref(), pb.adjustment.as_ref()).unwrap();

    let (vs, g) = match &pb.adjustment {
        Some(c) => (c.varsigma, c.gamma_control.clone()),
        None => (0.0, vec![0.0; pb.x_all.len()]),
    };
    let k = |i: usize, j: usize| se(&pb.x_all[i], &pb.x_all[j], h.nu, &h.lengthscale_rates) + vs * vs * g[i] * g[j];
    let nc = pb.train.len();
    let n = pb.x_all.len();
    let ky: Vec<Vec<f64>> = (0..nc)
        .map(|a| {
            (0..nc)
                .map(|b| {
                    let diag = if a == b { h.sigma * h.sigma + post.train_jitter } else { 0.0 };
                    k(pb.train[a], pb.train[b]) + diag
                })
                .collect()
        })
        .collect();
    let inv = gauss_jordan_inverse(&ky);
    let kx0 = |i: usize, a: usize| k(i, pb.train[a]);
    let resid: Vec<f64> = pb.y0.iter().map(|y| y - h.mu).collect();

    let mean: Vec<f64> = (0..n)
        .map(|i| h.mu + (0..nc).map(|a| kx0(i, a) * (0..nc).map(|b| inv[a][b] * resid[b]).sum::<f64>()).sum::<f64>())
        .collect();
    let cov: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| k(i, j) - (0..nc).map(|a| kx0(i, a) * (0..nc).map(|b| inv[a][b] * kx0(j, b)).sum::<f64>()).sum::<f64>())
        .collect();

    let mean_dev = max_abs(mean.iter().zip(&post.mean).map(|(a, b)| a - b)) / max_abs(mean.iter().copied()).max(1e-300);
    let cov_dev = max_abs((0..n * n).map(|t| cov[t] - post.cov[(t / n, t % n)])) / max_abs(cov.iter().copied()).max(1e-300);
    mean_dev.max(cov_dev)
}

/// Largest deviation of the double-robust draws from `tau^s - b^s` when the
/// prior adjustment is switched off, with `tau^s` taken from the standard
/// sampler and `b^s` recomputed from the shared mean draws.
pub fn identity_deviation(seed: u64) -> f64 {
    let sample = random_sample(30 + (seed as usize % 4) * 5, 2, 1000 + seed);
    let cfg = DRBayesConfig {
        draws: 64,
        seed,
        varsigma_override: Some(0.0),
        ..DRBayesConfig::default()
    };
    let a1 = run_algorithm1(&sample, &cfg).unwrap();
    let a2 = run_algorithm2(&sample, &cfg).unwrap();
    let fit = ControlFit::new(&sample, &cfg).unwrap();
    let riesz = fit_logistic_with_clip(sample.x.as_ref(), &sample.d, cfg.ridge, cfg.clip_eps).unwrap();
    let gamma = riesz.riesz_rows(&sample.d, sample.x.as_ref());
    let n = sample.n();
    let b = cfg.draws;
    let mhat: Vec<f64> = (0..n).map(|i| (0..b).map(|s| fit.draws[(i, s)]).sum::<f64>() / b as f64).collect();
    (0..b)
        .map(|s| {
            let bs: f64 = (0..n).map(|i| gamma[i] * (mhat[i] - fit.draws[(i, s)])).sum::<f64>() / n as f64;
            (a2.draws[s] - (a1.draws[s] - bs)).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest relative gap between the analytic evidence gradient and central
/// finite differences on a random 10-point problem. Components are compared
/// against `|fd| + 1e-3 max|fd|` so that near-zero entries do not dominate.
pub fn gradient_deviation(seed: u64) -> f64 {
    let mut r = rng(50_000 + seed);
    let p = r.random_range(1..=3);
    let x: Mat<f64> = Mat::from_fn(10, p, |_, _| r.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..10).map(|i| (x[(i, 0)] * 1.3).sin() + r.random_range(-0.3..0.3)).collect();
    let h = GPHyperParams::new(
        r.random_range(-0.5..0.5),
        r.random_range(0.5..2.0),
        (0..p).map(|_| r.random_range(0.3..2.0)).collect(),
        r.random_range(0.1..1.0),
    )
    .unwrap();
    let (_, g) = log_marginal_likelihood_with_gradient(&h, x.as_ref(), &y, None).unwrap();
    let mut analytic = vec![g.mu, g.nu];
    analytic.extend(&g.lengthscale_rates);
    analytic.push(g.sigma);

    let theta = |h: &GPHyperParams| {
        let mut v = vec![h.mu, h.nu];
        v.extend(&h.lengthscale_rates);
        v.push(h.sigma);
        v
    };
    let from = |v: &[f64]| GPHyperParams {
        mu: v[0],
        nu: v[1],
        lengthscale_rates: v[2..v.len() - 1].to_vec(),
        sigma: v[v.len() - 1],
    };
    let base = theta(&h);
    let fd: Vec<f64> = (0..base.len())
        .map(|k| {
            let step = 1e-5 * base[k].abs().max(1.0);
            let (mut up, mut dn) = (base.clone(), base.clone());
            up[k] += step;
            dn[k] -= step;
            let f = |v: &[f64]| log_marginal_likelihood(&from(v), x.as_ref(), &y, None).unwrap();
            (f(&up) - f(&dn)) / (2.0 * step)
        })
        .collect();
    let scale = max_abs(fd.iter().copied());
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / (f.abs() + 1e-3 * scale))
        .fold(0.0, f64::max)
}
