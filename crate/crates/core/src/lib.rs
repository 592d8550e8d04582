//! Semiparametric Bayesian difference-in-differences.
//!
//! The crate estimates the average treatment effect on the treated (ATT) from
//! two-period panels. Its Bayesian samplers place a Gaussian-process prior on
//! the control-arm conditional mean of the outcome change and average over
//! the covariate distribution with the Bayesian bootstrap; the double-robust
//! variant adds a propensity-based prior adjustment and a posterior
//! correction. Frequentist baselines, a staggered-adoption reduction and a
//! Monte Carlo harness are included.
//!
//! ```no_run
//! use bayesdid::bayes::{run_algorithm2, DRBayesConfig};
//! use bayesdid::data::{load_panel_csv, to_canonical, PanelSchema};
//!
//! let panel = load_panel_csv("panel.csv", &PanelSchema::default())?;
//! let sample = to_canonical(&panel)?;
//! let post = run_algorithm2(&sample, &DRBayesConfig::default())?;
//! println!("ATT {:.3} [{:.3}, {:.3}]", post.point, post.ci_low, post.ci_high);
//! # Ok::<(), bayesdid::Error>(())
//! ```

pub mod baselines;
pub mod bayes;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimate;
pub mod gp;
pub mod linalg;
pub mod optim;
pub mod propensity;
pub mod report;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
