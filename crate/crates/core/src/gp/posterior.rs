use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Accum, Mat, MatRef, Par};
use rand::Rng;
use rand_distr::StandardNormal;

use super::kernel::{add_rank_one, cross_gram};
use super::{AdjustedKernelConfig, GPHyperParams};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cholesky_jittered_scaled, col_mat, mean_diagonal};

/// Joint Gaussian law of the conditional mean at the evaluation rows.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub cov: Mat<f64>,
    /// Lower factor with `chol chol^T = cov + jitter I`.
    pub chol: Mat<f64>,
    pub jitter: f64,
    /// Jitter added to `K_c(X0, X0) + sigma^2 I` before it was factorized.
    pub train_jitter: f64,
}

impl GaussianPosterior {
    /// Factorizes `cov`. An all-zero covariance yields a zero factor and
    /// degenerate draws equal to the mean.
    pub fn new(mean: Vec<f64>, cov: Mat<f64>) -> Result<Self> {
        Self::with_scale(mean, cov, 0.0)
    }

    /// `floor` bounds the jitter scale from below: a posterior covariance can
    /// be tiny next to the rounding error of the prior it was computed from.
    fn with_scale(mean: Vec<f64>, cov: Mat<f64>, floor: f64) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: cov.nrows() });
        }
        let all_zero = (0..n).all(|j| (0..n).all(|i| cov[(i, j)] == 0.0));
        if all_zero {
            return Ok(Self {
                mean,
                chol: Mat::zeros(n, n),
                cov,
                jitter: 0.0,
                train_jitter: 0.0,
            });
        }
        let f = cholesky_jittered_scaled(cov.as_ref(), mean_diagonal(cov.as_ref()).max(floor))?;
        let (chol, jitter) = (f.l().to_owned(), f.jitter);
        Ok(Self {
            mean,
            cov,
            chol,
            jitter,
            train_jitter: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Posterior of the conditional mean at the rows of `x_all`, conditioned on
/// `(x0, y0)`:
/// `mean = mu 1 + K_c(X, X0) [K_c(X0, X0) + sigma^2 I]^{-1} (y0 - mu 1)` and
/// `cov = K_c(X, X) - K_c(X, X0) [K_c(X0, X0) + sigma^2 I]^{-1} K_c(X0, X)`.
pub fn gp_posterior(
    h: &GPHyperParams,
    x0: MatRef<'_, f64>,
    y0: &[f64],
    x_all: MatRef<'_, f64>,
    cfg: Option<&AdjustedKernelConfig>,
) -> Result<GaussianPosterior> {
    h.validate()?;
    let (nc, n) = (x0.nrows(), x_all.nrows());
    if y0.len() != nc {
        return Err(Error::DimensionMismatch { expected: nc, found: y0.len() });
    }
    if nc == 0 {
        return Err(Error::UnusableSample("no training points".into()));
    }
    let cfg = cfg.filter(|c| c.is_active());
    if let Some(c) = cfg {
        if c.gamma_control.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: c.gamma_control.len() });
        }
        if c.gamma_train.len() != nc {
            return Err(Error::DimensionMismatch { expected: nc, found: c.gamma_train.len() });
        }
    }

    let mut k00 = cross_gram(h, x0, x0)?;
    let mut k0x = cross_gram(h, x0, x_all)?;
    let mut kxx = cross_gram(h, x_all, x_all)?;
    if let Some(c) = cfg {
        add_rank_one(&mut k00, c.varsigma, &c.gamma_train, &c.gamma_train);
        add_rank_one(&mut k0x, c.varsigma, &c.gamma_train, &c.gamma_control);
        add_rank_one(&mut kxx, c.varsigma, &c.gamma_control, &c.gamma_control);
    }
    let s2 = h.sigma * h.sigma;
    for i in 0..nc {
        k00[(i, i)] += s2;
    }
    let factor = cholesky_jittered(k00.as_ref())?;
    let l = factor.l();

    // A = L^{-1} K(X0, X), b = L^{-1} (y0 - mu)
    let mut a = k0x;
    solve_lower_triangular_in_place(l, a.as_mut(), Par::Seq);
    let mut b = col_mat(&y0.iter().map(|y| y - h.mu).collect::<Vec<_>>());
    solve_lower_triangular_in_place(l, b.as_mut(), Par::Seq);

    let mut mean = vec![h.mu; n];
    for (j, m) in mean.iter_mut().enumerate() {
        *m += (0..nc).map(|i| a[(i, j)] * b[(i, 0)]).sum::<f64>();
    }
    let mut cov = kxx;
    matmul(cov.as_mut(), Accum::Add, a.transpose(), a.as_ref(), -1.0, Par::Seq);
    // symmetrize away rounding differences between the triangles
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let prior_scale = h.nu * h.nu;
    let mut post = GaussianPosterior::with_scale(mean, cov, 1e-8 * prior_scale)?;
    post.train_jitter = factor.jitter;
    Ok(post)
}

/// One draw `mean + chol z`, `z` standard normal.
pub fn sample_posterior<R: Rng + ?Sized>(post: &GaussianPosterior, rng: &mut R) -> Vec<f64> {
    let m = sample_matrix(post, 1, rng);
    m.col_as_slice(0).to_vec()
}

/// `b` draws as the columns of an `n x b` matrix. Column `s` uses the `s`-th
/// block of `n` standard normals from `rng`, so a prefix of a longer run
/// reproduces a shorter one.
pub fn sample_matrix<R: Rng + ?Sized>(post: &GaussianPosterior, b: usize, rng: &mut R) -> Mat<f64> {
    let n = post.dim();
    let mut z = Mat::<f64>::zeros(n, b);
    for s in 0..b {
        for i in 0..n {
            z[(i, s)] = rng.sample(StandardNormal);
        }
    }
    let mut out = Mat::from_fn(n, b, |i, _| post.mean[i]);
    matmul(out.as_mut(), Accum::Add, post.chol.as_ref(), z.as_ref(), 1.0, Par::Seq);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inverse_spd;
    use rand::SeedableRng;

    #[test]
    fn single_point_closed_form() {
        let h = GPHyperParams::new(0.5, 1.5, vec![1.0], 0.7).unwrap();
        let x = Mat::from_fn(1, 1, |_, _| 0.2);
        let post = gp_posterior(&h, x.as_ref(), &[2.0], x.as_ref(), None).unwrap();
        let (n2, s2) = (h.nu * h.nu, h.sigma * h.sigma);
        let s2 = s2 + post.train_jitter;
        let m = h.mu + n2 * (2.0 - h.mu) / (n2 + s2);
        let v = n2 - n2 * n2 / (n2 + s2);
        assert!((post.mean[0] - m).abs() < 1e-12, "{} vs {m}", post.mean[0]);
        assert!((post.cov[(0, 0)] - v).abs() < 1e-9);
    }

    #[test]
    fn huge_noise_returns_the_prior() {
        let h = GPHyperParams::new(0.3, 1.0, vec![1.0, 1.0], 1e8).unwrap();
        let x0 = Mat::from_fn(5, 2, |i, j| (i + j) as f64 * 0.3);
        let xa = Mat::from_fn(7, 2, |i, j| (i * j) as f64 * 0.2);
        let post = gp_posterior(&h, x0.as_ref(), &[1.0, 2.0, 3.0, 4.0, 5.0], xa.as_ref(), None).unwrap();
        let prior = cross_gram(&h, xa.as_ref(), xa.as_ref()).unwrap();
        for i in 0..7 {
            assert!((post.mean[i] - 0.3).abs() < 1e-10);
            for j in 0..7 {
                assert!((post.cov[(i, j)] - prior[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matches_dense_inverse_with_adjustment() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = Mat::from_fn(9, 2, |_, _| rng.random_range(-1.5..1.5));
        let train = [0, 2, 3, 5, 8];
        let x0 = crate::linalg::select_rows(x.as_ref(), &train);
        let y0: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..9).map(|_| -rng.random_range(0.5..2.0)).collect();
        let cfg = AdjustedKernelConfig::for_rows(0.6, g.clone(), &train).unwrap();
        let h = GPHyperParams::new(0.2, 1.1, vec![0.8, 1.3], 0.4).unwrap();
        let post = gp_posterior(&h, x0.as_ref(), &y0, x.as_ref(), Some(&cfg)).unwrap();

        let kc = |i: usize, j: usize| {
            let xi: Vec<f64> = (0..2).map(|l| x[(i, l)]).collect();
            let xj: Vec<f64> = (0..2).map(|l| x[(j, l)]).collect();
            crate::gp::se_kernel(&xi, &xj, &h).unwrap() + 0.36 * g[i] * g[j]
        };
        let ky = Mat::from_fn(5, 5, |a, b| kc(train[a], train[b]) + if a == b { 0.16 + post.train_jitter } else { 0.0 });
        let inv = inverse_spd(ky.as_ref(), "oracle").unwrap();
        for i in 0..9 {
            let w: Vec<f64> = (0..5).map(|a| (0..5).map(|b| kc(i, train[b]) * inv[(b, a)]).sum()).collect();
            let m: f64 = 0.2 + (0..5).map(|a| w[a] * (y0[a] - 0.2)).sum::<f64>();
            assert!((post.mean[i] - m).abs() < 1e-10, "{} vs {m}", post.mean[i]);
            for j in 0..9 {
                let v = kc(i, j) - (0..5).map(|a| w[a] * kc(train[a], j)).sum::<f64>();
                assert!((post.cov[(i, j)] - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_adjustment_is_bit_identical() {
        let x = Mat::from_fn(6, 1, |i, _| i as f64 * 0.4);
        let y0 = [0.1, -0.3, 0.5];
        let train = [0, 2, 4];
        let x0 = crate::linalg::select_rows(x.as_ref(), &train);
        let h = GPHyperParams::new(0.0, 1.0, vec![1.0], 0.2).unwrap();
        let cfg = AdjustedKernelConfig::for_rows(0.0, vec![-3.0; 6], &train).unwrap();
        let a = gp_posterior(&h, x0.as_ref(), &y0, x.as_ref(), None).unwrap();
        let b = gp_posterior(&h, x0.as_ref(), &y0, x.as_ref(), Some(&cfg)).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!(a.cov == b.cov && a.chol == b.chol);
    }

    #[test]
    fn zero_covariance_draw_is_the_mean() {
        let post = GaussianPosterior::new(vec![1.0, -2.0], Mat::zeros(2, 2)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_posterior(&post, &mut rng), vec![1.0, -2.0]);
    }

    #[test]
    fn draw_moments() {
        let cov = Mat::from_fn(3, 3, |i, j| [[1.0, 0.5, 0.2], [0.5, 2.0, -0.3], [0.2, -0.3, 0.5]][i][j]);
        let post = GaussianPosterior::new(vec![1.0, 0.0, -1.0], cov.clone()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let b = 10_000;
        let draws = sample_matrix(&post, b, &mut rng);
        let means: Vec<f64> = (0..3).map(|i| (0..b).map(|s| draws[(i, s)]).sum::<f64>() / b as f64).collect();
        for i in 0..3 {
            let sd = cov[(i, i)].sqrt();
            assert!((means[i] - post.mean[i]).abs() < 4.0 * sd / 100.0);
        }
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let c: f64 = (0..b).map(|s| (draws[(i, s)] - means[i]) * (draws[(j, s)] - means[j])).sum::<f64>()
                    / (b - 1) as f64;
                err += (c - cov[(i, j)]).powi(2);
                norm += cov[(i, j)].powi(2);
            }
        }
        assert!(err.sqrt() < 0.1 * norm.sqrt());
    }

    #[test]
    fn prefix_of_longer_run_matches() {
        let post = GaussianPosterior::new(vec![0.0; 2], Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.3 })).unwrap();
        let a = sample_matrix(&post, 3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(8));
        let b = sample_matrix(&post, 5, &mut rand_chacha::ChaCha8Rng::seed_from_u64(8));
        for s in 0..3 {
            for i in 0..2 {
                assert_eq!(a[(i, s)], b[(i, s)]);
            }
        }
    }
}
