//! Invariants checked on random inputs. Each function runs `cases` cases
//! and returns the first counterexample as an error.

use bayesdid::baselines::{dr_estimator, hajek_contrast, ipw_ht, twfe};
use bayesdid::bayes::{bayesian_bootstrap_weights, run_algorithm1, run_algorithm2, DRBayesConfig};
use bayesdid::data::{DiDSample, PanelDataset};
use bayesdid::gp::{adjusted_gram, AdjustedKernelConfig, GPHyperParams};
use bayesdid::linalg::min_eigenvalue;
use bayesdid::propensity::{logistic, RieszModel};
use faer::Mat;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use super::{random_sample, rng};

type Outcome = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

pub fn bootstrap_weights_sum_to_one(cases: u32) -> Outcome {
    run(cases, (1usize..400, any::<u64>()), |(n, seed)| {
        let w = bayesian_bootstrap_weights(n, &mut rng(seed));
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        Ok(())
    })
}

/// Componentwise average over replications is `1/n` within Monte Carlo
/// error (Dirichlet(1, ..., 1) has variance `(n - 1) / (n^2 (n + 1))`).
pub fn bootstrap_weights_have_mean_one_over_n(cases: u32) -> Outcome {
    run(cases, (2usize..12, any::<u64>()), |(n, seed)| {
        let reps = 10_000;
        let mut r = rng(seed);
        let mut acc = vec![0.0; n];
        for _ in 0..reps {
            for (a, w) in acc.iter_mut().zip(bayesian_bootstrap_weights(n, &mut r)) {
                *a += w;
            }
        }
        let nf = n as f64;
        let sd = ((nf - 1.0) / (nf * nf * (nf + 1.0)) / reps as f64).sqrt();
        for a in acc {
            prop_assert!((a / reps as f64 - 1.0 / nf).abs() < 4.5 * sd);
        }
        Ok(())
    })
}

fn gram_inputs() -> impl Strategy<Value = (Vec<Vec<f64>>, f64, Vec<f64>, f64, Vec<f64>)> {
    (1usize..4, 1usize..25).prop_flat_map(|(p, n)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, p), n),
            0.1..3.0f64,
            prop::collection::vec(0.05..5.0f64, p),
            0.0..2.0f64,
            prop::collection::vec(-5.0..0.0f64, n),
        )
    })
}

pub fn grams_are_psd(cases: u32) -> Outcome {
    run(cases, gram_inputs(), |(rows, nu, rates, varsigma, gamma)| {
        let n = rows.len();
        let x = Mat::from_fn(n, rows[0].len(), |i, j| rows[i][j]);
        let h = GPHyperParams::new(0.0, nu, rates, 0.1).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let cfg = AdjustedKernelConfig::for_rows(varsigma, gamma, &all).unwrap();
        for adj in [None, Some(&cfg)] {
            let k = adjusted_gram(&h, x.as_ref(), adj).unwrap();
            let trace: f64 = (0..n).map(|i| k[(i, i)]).sum();
            prop_assert!(min_eigenvalue(k.as_ref()) >= -1e-10 * trace.max(1.0));
        }
        Ok(())
    })
}

/// `(d - pi(x)) / ((1 - pi(x)) pi)` equals `d / pi - (1 - d) pi(x) / ((1 - pi(x)) pi)`.
pub fn riesz_dual_formula(cases: u32) -> Outcome {
    let s = (prop::collection::vec(-2.0..2.0f64, 1..5), 0.05..0.95f64, any::<bool>(), -3.0..3.0f64);
    run(cases, s, |(coef, pi_hat, d, xv)| {
        let p = coef.len() - 1;
        let model = RieszModel::new(coef.clone(), pi_hat, 1e-6).unwrap();
        let x = vec![xv; p];
        let px = logistic(coef[0] + coef[1..].iter().map(|b| b * xv).sum::<f64>()).clamp(1e-6, 1.0 - 1e-6);
        let dv = if d { 1.0 } else { 0.0 };
        let dual = dv / pi_hat - (1.0 - dv) * px / ((1.0 - px) * pi_hat);
        let got = model.riesz_hat(d, &x);
        prop_assert!((got - dual).abs() <= 1e-9 * dual.abs().max(1.0), "{} vs {}", got, dual);
        Ok(())
    })
}

pub fn hajek_scaling_invariance(cases: u32) -> Outcome {
    let s = (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.01..3.0f64, n),
            prop::collection::vec(0.01..3.0f64, n),
            0.001..1000.0f64,
            0.001..1000.0f64,
        )
    });
    run(cases, s, |(dy, w1, w0, c1, c0)| {
        let base = hajek_contrast(&dy, &w1, &w0).unwrap();
        let s1: Vec<f64> = w1.iter().map(|w| c1 * w).collect();
        let s0: Vec<f64> = w0.iter().map(|w| c0 * w).collect();
        let scaled = hajek_contrast(&dy, &s1, &s0).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-10 * (1.0 + base.abs()));
        Ok(())
    })
}

/// With `mhat = 0` and a constant propensity the double-robust and the
/// Horvitz-Thompson point estimates coincide.
pub fn dr_equals_ipw_under_null_outcome_model(cases: u32) -> Outcome {
    run(cases, (20usize..60, 1usize..3, any::<u64>(), -1.5..1.5f64), |(n, p, seed, intercept)| {
        let sample = random_sample(n, p, seed);
        let mut coef = vec![0.0; p + 1];
        coef[0] = intercept;
        let model = RieszModel::new(coef, sample.treated_share(), 1e-6).unwrap();
        let dr = dr_estimator(&sample, &model, &vec![0.0; n]).unwrap().estimate;
        let ht = ipw_ht(&sample, &model).unwrap().estimate;
        prop_assert!((dr - ht).abs() <= 1e-10 * (1.0 + ht.abs()), "{} vs {}", dr, ht);
        Ok(())
    })
}

pub fn twfe_without_covariates_is_difference_in_means(cases: u32) -> Outcome {
    let s = (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(any::<bool>(), n),
        )
    });
    run(cases, s, |(y1, y2, mut d)| {
        d[0] = true;
        d[1] = false;
        let n = y1.len();
        let panel = PanelDataset::new(y1.clone(), y2.clone(), d.clone(), Mat::zeros(n, 0), None).unwrap();
        let est = twfe(&panel).unwrap().estimate;
        let mean = |t: bool| {
            let v: Vec<f64> = (0..n).filter(|&i| d[i] == t).map(|i| y2[i] - y1[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let did = mean(true) - mean(false);
        prop_assert!((est - did).abs() <= 1e-9 * (1.0 + did.abs()), "{} vs {}", est, did);
        Ok(())
    })
}

fn shifted(sample: &DiDSample, c: f64) -> DiDSample {
    DiDSample::new(sample.dy.iter().map(|v| v + c).collect(), sample.d.clone(), sample.x.clone()).unwrap()
}

/// Adding a constant to every outcome change leaves the ATT draws of both
/// samplers unchanged up to optimizer tolerance.
pub fn bayesian_draws_are_shift_invariant(cases: u32) -> Outcome {
    run(cases, (any::<u64>(), -20.0..20.0f64), |(seed, c)| {
        let sample = random_sample(30, 2, seed);
        let cfg = DRBayesConfig {
            draws: 40,
            seed,
            ..DRBayesConfig::default()
        };
        let moved = shifted(&sample, c);
        for (a, b) in [
            (run_algorithm1(&sample, &cfg).unwrap(), run_algorithm1(&moved, &cfg).unwrap()),
            (run_algorithm2(&sample, &cfg).unwrap(), run_algorithm2(&moved, &cfg).unwrap()),
        ] {
            for (u, v) in a.draws.iter().zip(&b.draws) {
                prop_assert!((u - v).abs() <= 1e-4, "{} vs {} (shift {})", u, v, c);
            }
        }
        Ok(())
    })
}

pub fn samplers_are_deterministic(cases: u32) -> Outcome {
    run(cases, any::<u64>(), |seed| {
        let sample = random_sample(25, 2, seed ^ 0x55);
        let cfg = DRBayesConfig {
            draws: 30,
            seed,
            ..DRBayesConfig::default()
        };
        prop_assert_eq!(run_algorithm1(&sample, &cfg).unwrap(), run_algorithm1(&sample, &cfg).unwrap());
        prop_assert_eq!(run_algorithm2(&sample, &cfg).unwrap(), run_algorithm2(&sample, &cfg).unwrap());
        Ok(())
    })
}

/// Every property with its default case count, in a fixed order.
pub fn all() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("bootstrap weights sum to one", || bootstrap_weights_sum_to_one(256)),
        ("bootstrap weights average 1/n", || bootstrap_weights_have_mean_one_over_n(8)),
        ("K and K_c Gram matrices are PSD", || grams_are_psd(128)),
        ("riesz representer dual formula", || riesz_dual_formula(256)),
        ("Hajek positive-scaling invariance", || hajek_scaling_invariance(256)),
        ("DR equals IPW-HT with mhat = 0 and constant propensity", || dr_equals_ipw_under_null_outcome_model(64)),
        ("TWFE without covariates is the 2x2 DiD", || twfe_without_covariates_is_difference_in_means(128)),
        ("Bayesian draws are shift invariant", || bayesian_draws_are_shift_invariant(12)),
        ("samplers are deterministic under a fixed seed", || samplers_are_deterministic(12)),
    ]
}
