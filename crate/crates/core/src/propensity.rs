//! Logistic propensity score and the plug-in Riesz representer
//! `gamma(d, x) = (d - pi(x)) / ((1 - pi(x)) pi)`.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;

/// Default probability clipping bound.
pub const DEFAULT_CLIP_EPS: f64 = 1e-6;

const MAX_NEWTON_ITERATIONS: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Fitted logistic propensity model together with the treated share.
#[derive(Debug, Clone, PartialEq)]
pub struct RieszModel {
    /// Intercept followed by one slope per covariate.
    pub coef: Vec<f64>,
    /// Treated proportion `pi`, the sample mean of the treatment indicator.
    pub pi_hat: f64,
    /// Fitted probabilities are clipped to `[clip_eps, 1 - clip_eps]`.
    pub clip_eps: f64,
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl RieszModel {
    pub fn new(coef: Vec<f64>, pi_hat: f64, clip_eps: f64) -> Result<Self> {
        if !(pi_hat > 0.0 && pi_hat < 1.0) {
            return Err(Error::InvalidInput(format!("treated share must lie in (0, 1), got {pi_hat}")));
        }
        if !(0.0..0.5).contains(&clip_eps) {
            return Err(Error::InvalidInput(format!("clip_eps must lie in [0, 0.5), got {clip_eps}")));
        }
        if coef.is_empty() || coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("logistic coefficients must be finite and include an intercept".into()));
        }
        Ok(Self { coef, pi_hat, clip_eps })
    }

    pub fn p(&self) -> usize {
        self.coef.len() - 1
    }

    /// Replaces the treated share, e.g. with the full-sample share when the
    /// propensity model was fitted on part of the sample.
    pub fn with_pi_hat(mut self, pi_hat: f64) -> Result<Self> {
        if !(pi_hat > 0.0 && pi_hat < 1.0) {
            return Err(Error::InvalidInput(format!("treated share must lie in (0, 1), got {pi_hat}")));
        }
        self.pi_hat = pi_hat;
        Ok(self)
    }

    /// `coef^T (1, x)`.
    pub fn index(&self, x: &[f64]) -> f64 {
        self.coef[0] + self.coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Clipped fitted propensity score at `x`.
    pub fn propensity_at(&self, x: &[f64]) -> f64 {
        logistic(self.index(x)).clamp(self.clip_eps, 1.0 - self.clip_eps)
    }

    /// `gamma(d, x) = (d - pi(x)) / ((1 - pi(x)) pi)`.
    pub fn riesz_hat(&self, d: bool, x: &[f64]) -> f64 {
        let px = self.propensity_at(x);
        let dv = if d { 1.0 } else { 0.0 };
        (dv - px) / ((1.0 - px) * self.pi_hat)
    }

    /// Propensity scores at every row of `x`.
    pub fn propensity_rows(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.propensity_at(&row(x, i))).collect()
    }

    /// `gamma(d_i, x_i)` for every row.
    pub fn riesz_rows(&self, d: &[bool], x: MatRef<'_, f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.riesz_hat(d[i], &row(x, i))).collect()
    }

    /// `gamma(0, x_i)` for every row.
    pub fn riesz_control_rows(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.riesz_hat(false, &row(x, i))).collect()
    }
}

fn row(x: MatRef<'_, f64>, i: usize) -> Vec<f64> {
    (0..x.ncols()).map(|j| x[(i, j)]).collect()
}

/// Penalized negative log likelihood `-sum ell_i + reg/2 |slopes|^2`.
fn objective(z: &[Vec<f64>], d: &[f64], beta: &[f64], reg: f64) -> f64 {
    let nll: f64 = z
        .iter()
        .zip(d)
        .map(|(zi, &di)| {
            let eta: f64 = zi.iter().zip(beta).map(|(a, b)| a * b).sum();
            softplus(eta) - di * eta
        })
        .sum();
    nll + 0.5 * reg * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Maximizes the (ridge-penalized) Bernoulli log likelihood with logistic
/// link by damped Newton steps. The ridge penalty `reg/2 |slopes|^2` leaves
/// the intercept free. Convergence means a gradient norm of at most `1e-8`
/// per observation.
pub fn fit_logistic(x: MatRef<'_, f64>, d: &[bool], reg: f64) -> Result<RieszModel> {
    fit_logistic_with_clip(x, d, reg, DEFAULT_CLIP_EPS)
}

pub fn fit_logistic_with_clip(x: MatRef<'_, f64>, d: &[bool], reg: f64, clip_eps: f64) -> Result<RieszModel> {
    let n = x.nrows();
    if d.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: d.len() });
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge penalty must be finite and >= 0, got {reg}")));
    }
    let treated = d.iter().filter(|&&t| t).count();
    if treated == 0 || treated == n {
        return Err(Error::SingleClass);
    }
    let k = x.ncols() + 1;
    let z: Vec<Vec<f64>> = (0..n)
        .map(|i| std::iter::once(1.0).chain((0..k - 1).map(|j| x[(i, j)])).collect())
        .collect();
    let dv: Vec<f64> = d.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let nf = n as f64;

    let mut beta = vec![0.0; k];
    beta[0] = (treated as f64 / (nf - treated as f64)).ln();
    let mut f = objective(&z, &dv, &beta, reg);
    let mut converged = false;
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let mut grad = vec![0.0; k];
        let mut hess = Mat::<f64>::zeros(k, k);
        for (zi, &di) in z.iter().zip(&dv) {
            let eta: f64 = zi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = logistic(eta);
            let w = p * (1.0 - p);
            for a in 0..k {
                grad[a] += (p - di) * zi[a];
                for b in 0..=a {
                    hess[(a, b)] += w * zi[a] * zi[b];
                }
            }
        }
        for a in 1..k {
            grad[a] += reg * beta[a];
            hess[(a, a)] += reg;
        }
        for a in 0..k {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / nf;
        if gnorm <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        if reg == 0.0 && f / nf < 1e-6 {
            break;
        }
        let step = match solve_spd(hess.as_ref(), &grad, "logistic Hessian is singular") {
            Ok(s) => s,
            Err(_) => break,
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            let fc = objective(&z, &dv, &cand, reg);
            if fc.is_finite() && fc <= f {
                beta = cand;
                f = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(
            "logistic regression did not converge (the treatment may be perfectly separated by the covariates; \
             a positive ridge penalty bounds the coefficients)"
                .into(),
        ));
    }
    RieszModel::new(beta, treated as f64 / nf, clip_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn intercept_only_balanced_is_one_half() {
        let d = [true, false, true, false];
        let m = fit_logistic(Mat::<f64>::zeros(4, 0).as_ref(), &d, 0.0).unwrap();
        assert!((m.propensity_at(&[]) - 0.5).abs() < 1e-12);
        assert_eq!(m.pi_hat, 0.5);
    }

    #[test]
    fn separation_is_reported_unless_penalized() {
        let x = Mat::from_fn(6, 1, |i, _| i as f64);
        let d = [false, false, false, true, true, true];
        assert!(matches!(fit_logistic(x.as_ref(), &d, 0.0), Err(Error::NonConvergence(_))));
        let m = fit_logistic(x.as_ref(), &d, 1.0).unwrap();
        assert!(m.coef.iter().all(|c| c.abs() < 10.0));
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Mat::from_fn(3, 1, |i, _| i as f64);
        assert!(matches!(fit_logistic(x.as_ref(), &[true; 3], 0.0), Err(Error::SingleClass)));
    }

    #[test]
    fn link_and_clipping() {
        let m = RieszModel::new(vec![0.0, 0.0], 0.3, 1e-6).unwrap();
        assert_eq!(m.propensity_at(&[4.0]), 0.5);
        let m = RieszModel::new(vec![0.0, 1.0], 0.3, 1e-6).unwrap();
        assert_eq!(m.propensity_at(&[0.0]), 0.5);
        assert_eq!(m.propensity_at(&[100.0]), 1.0 - 1e-6);
        assert_eq!(m.propensity_at(&[-100.0]), 1e-6);
    }

    #[test]
    fn riesz_examples() {
        let m = RieszModel::new(vec![0.3, -1.2], 0.4, 1e-6).unwrap();
        for x in [-2.0, 0.0, 3.0] {
            assert!((m.riesz_hat(true, &[x]) - 1.0 / 0.4).abs() < 1e-12);
            assert!(m.riesz_hat(false, &[x]) <= 0.0);
        }
        let half = RieszModel::new(vec![0.0], 0.5, 1e-6).unwrap();
        assert!((half.riesz_hat(false, &[]) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_irls_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 50;
        let x = Mat::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let d: Vec<bool> = (0..n)
            .map(|i| rng.random::<f64>() < logistic(0.3 + 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)]))
            .collect();
        let m = fit_logistic(x.as_ref(), &d, 0.0).unwrap();

        // textbook IRLS: beta <- (Z'WZ)^{-1} Z'W z_work
        let mut beta = [0.0f64; 3];
        for _ in 0..100 {
            let mut a = [[0.0f64; 3]; 3];
            let mut b = [0.0f64; 3];
            for i in 0..n {
                let zi = [1.0, x[(i, 0)], x[(i, 1)]];
                let eta: f64 = (0..3).map(|k| zi[k] * beta[k]).sum();
                let p = 1.0 / (1.0 + (-eta).exp());
                let w = p * (1.0 - p);
                let work = eta + (if d[i] { 1.0 } else { 0.0 } - p) / w;
                for r in 0..3 {
                    b[r] += w * zi[r] * work;
                    for c in 0..3 {
                        a[r][c] += w * zi[r] * zi[c];
                    }
                }
            }
            let am = Mat::from_fn(3, 3, |r, c| a[r][c]);
            let sol = solve_spd(am.as_ref(), &b, "oracle").unwrap();
            beta = [sol[0], sol[1], sol[2]];
        }
        for k in 0..3 {
            assert!((m.coef[k] - beta[k]).abs() < 1e-6, "{:?} vs {:?}", m.coef, beta);
        }
    }
}
