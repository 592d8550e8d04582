//! Gaussian-process machinery for the control-arm conditional mean.

mod evidence;
mod kernel;
mod optimize;
mod posterior;

pub use evidence::{log_marginal_likelihood, log_marginal_likelihood_with_gradient, EvidenceGradient};
pub use kernel::{adjusted_kernel, adjusted_gram, cross_gram, se_kernel, varsigma_rule};
pub use optimize::{optimize_hyperparameters, optimize_hyperparameters_detailed, OptimizationReport, OptimizerSettings};
pub use posterior::{gp_posterior, sample_matrix, sample_posterior, GaussianPosterior};

use crate::error::{Error, Result};

/// Hyperparameters of the squared-exponential ARD prior
/// `m ~ GP(mu, nu^2 exp(-sum_l a_l^2 (x_l - x'_l)^2 / 2))` with Gaussian
/// observation noise of standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GPHyperParams {
    pub mu: f64,
    pub nu: f64,
    /// Inverse lengthscales `a_l`, one per covariate.
    pub lengthscale_rates: Vec<f64>,
    pub sigma: f64,
}

impl GPHyperParams {
    pub fn new(mu: f64, nu: f64, lengthscale_rates: Vec<f64>, sigma: f64) -> Result<Self> {
        let h = Self {
            mu,
            nu,
            lengthscale_rates,
            sigma,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !self.mu.is_finite() {
            return Err(Error::InvalidInput(format!("prior mean {} is not finite", self.mu)));
        }
        if !positive(self.nu) || !positive(self.sigma) {
            return Err(Error::InvalidInput(format!(
                "nu = {} and sigma = {} must be positive and finite",
                self.nu, self.sigma
            )));
        }
        if let Some(a) = self.lengthscale_rates.iter().find(|a| !positive(**a)) {
            return Err(Error::InvalidInput(format!("lengthscale rate {a} must be positive and finite")));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.lengthscale_rates.len()
    }
}

/// Rank-one prior adjustment `K_c(x, x') = K(x, x') + varsigma^2 g(x) g(x')`
/// where `g(x)` is the plug-in Riesz representer `gamma(0, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedKernelConfig {
    pub varsigma: f64,
    /// `gamma(0, x)` at every row where the posterior is evaluated.
    pub gamma_control: Vec<f64>,
    /// `gamma(0, x)` at the training rows, in training order.
    pub gamma_train: Vec<f64>,
}

impl AdjustedKernelConfig {
    /// Builds a configuration whose training rows are `train_rows` of the
    /// evaluation rows.
    pub fn for_rows(varsigma: f64, gamma_control: Vec<f64>, train_rows: &[usize]) -> Result<Self> {
        if !varsigma.is_finite() || varsigma < 0.0 {
            return Err(Error::InvalidInput(format!("varsigma must be finite and >= 0, got {varsigma}")));
        }
        if gamma_control.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("gamma(0, x) contains non-finite values".into()));
        }
        if let Some(&bad) = train_rows.iter().find(|&&i| i >= gamma_control.len()) {
            return Err(Error::InvalidInput(format!(
                "training row {bad} out of range for {} evaluation rows",
                gamma_control.len()
            )));
        }
        let gamma_train = train_rows.iter().map(|&i| gamma_control[i]).collect();
        Ok(Self {
            varsigma,
            gamma_control,
            gamma_train,
        })
    }

    /// Whether the adjustment contributes anything.
    pub fn is_active(&self) -> bool {
        self.varsigma != 0.0
    }
}
