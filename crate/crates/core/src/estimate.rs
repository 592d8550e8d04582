//! One entry point that runs any set of estimators on a sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{control_ols, dr_estimator, ipw_hajek, ipw_ht, or_estimator, twfe, FrequentistResult};
use crate::bayes::{run_algorithm1, run_algorithm2, run_both, ATTPosterior, DRBayesConfig};
use crate::data::{trim_mask, DiDSample, PanelDataset};
use crate::error::{Error, Result};
use crate::propensity::{fit_logistic_with_clip, RieszModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bayes,
    DrBayes,
    Dr,
    Or,
    IpwHt,
    IpwHajek,
    Twfe,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Bayes,
        Method::DrBayes,
        Method::Dr,
        Method::Or,
        Method::IpwHt,
        Method::IpwHajek,
        Method::Twfe,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Bayes => "bayes",
            Method::DrBayes => "dr-bayes",
            Method::Dr => "dr",
            Method::Or => "or",
            Method::IpwHt => "ipw-ht",
            Method::IpwHajek => "ipw-hajek",
            Method::Twfe => "twfe",
        }
    }

    pub fn is_bayesian(self) -> bool {
        matches!(self, Method::Bayes | Method::DrBayes)
    }

    /// Parses a comma-separated list such as `bayes,dr-bayes`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.tag()).collect();
                Error::InvalidInput(format!("unknown method '{s}'; valid methods: {}", valid.join(", ")))
            })
    }
}

/// Estimate and interval of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub method: Method,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Frequentist standard error; absent for the Bayesian methods.
    pub std_err: Option<f64>,
}

impl MethodEstimate {
    pub fn ci_length(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    fn from_posterior(method: Method, post: &ATTPosterior) -> Self {
        Self {
            method,
            estimate: post.point,
            ci_low: post.ci_low,
            ci_high: post.ci_high,
            std_err: None,
        }
    }

    fn from_frequentist(method: Method, r: &FrequentistResult, alpha: f64) -> Self {
        let r = r.at_level(alpha);
        Self {
            method,
            estimate: r.estimate,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            std_err: Some(r.std_err),
        }
    }
}

/// Result of one method; failures carry the error message.
pub type MethodOutcome = std::result::Result<MethodEstimate, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSettings {
    /// Sampler configuration; its `alpha` also sets the frequentist level.
    pub bayes: DRBayesConfig,
    /// Drop units whose fitted propensity exceeds `1 - trim` before
    /// estimation.
    pub trim: Option<f64>,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self {
            bayes: DRBayesConfig::default(),
            trim: None,
        }
    }
}

/// Units kept after propensity trimming, in original order.
pub fn trimmed_rows(sample: &DiDSample, settings: &EstimateSettings) -> Result<Vec<usize>> {
    let Some(t) = settings.trim else {
        return Ok((0..sample.n()).collect());
    };
    let model = fit_logistic_with_clip(sample.x.as_ref(), &sample.d, settings.bayes.ridge, settings.bayes.clip_eps)?;
    let keep = trim_mask(&model.propensity_rows(sample.x.as_ref()), t)?;
    let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    if rows.is_empty() {
        return Err(Error::UnusableSample(format!("trimming at t = {t} discards every unit")));
    }
    Ok(rows)
}

/// Runs `methods` in the given order. `panel` is required only by TWFE. With
/// trimming, the sample and panel are restricted to the kept units first;
/// trimming failures are returned as an error.
pub fn run_methods(
    sample: &DiDSample,
    panel: Option<&PanelDataset>,
    methods: &[Method],
    settings: &EstimateSettings,
) -> Result<Vec<MethodOutcome>> {
    settings.bayes.validate()?;
    if settings.trim.is_some() {
        let rows = trimmed_rows(sample, settings)?;
        let sample = sample.subset(&rows)?;
        let panel = panel.map(|p| p.subset(&rows)).transpose()?;
        let inner = EstimateSettings {
            trim: None,
            ..settings.clone()
        };
        return run_methods(&sample, panel.as_ref(), methods, &inner);
    }

    let cfg = &settings.bayes;
    let alpha = cfg.alpha;
    let wants = |m: Method| methods.contains(&m);

    let (mut bayes, mut dr_bayes): (Option<MethodOutcome>, Option<MethodOutcome>) = (None, None);
    if wants(Method::Bayes) && wants(Method::DrBayes) && !cfg.sample_split {
        match run_both(sample, cfg) {
            Ok((a1, a2)) => {
                bayes = Some(Ok(MethodEstimate::from_posterior(Method::Bayes, &a1)));
                dr_bayes = Some(Ok(MethodEstimate::from_posterior(Method::DrBayes, &a2)));
            }
            Err(_) => {
                // attribute the failure to whichever sampler actually fails
                bayes = Some(run_algorithm1(sample, cfg).map(|p| MethodEstimate::from_posterior(Method::Bayes, &p)).map_err(|e| e.to_string()));
                dr_bayes = Some(run_algorithm2(sample, cfg).map(|p| MethodEstimate::from_posterior(Method::DrBayes, &p)).map_err(|e| e.to_string()));
            }
        }
    }

    let needs_riesz = methods.iter().any(|m| matches!(m, Method::Dr | Method::IpwHt | Method::IpwHajek));
    let riesz: Option<std::result::Result<RieszModel, String>> = needs_riesz.then(|| {
        fit_logistic_with_clip(sample.x.as_ref(), &sample.d, cfg.ridge, cfg.clip_eps).map_err(|e| format!("propensity model: {e}"))
    });
    let with_riesz = |f: &dyn Fn(&RieszModel) -> Result<FrequentistResult>, m: Method| -> MethodOutcome {
        match riesz.as_ref().expect("propensity model fitted for weighting methods") {
            Ok(r) => f(r).map(|res| MethodEstimate::from_frequentist(m, &res, alpha)).map_err(|e| e.to_string()),
            Err(msg) => Err(msg.clone()),
        }
    };

    let outcomes = methods
        .iter()
        .map(|&m| match m {
            Method::Bayes => bayes.clone().unwrap_or_else(|| {
                run_algorithm1(sample, cfg)
                    .map(|p| MethodEstimate::from_posterior(m, &p))
                    .map_err(|e| e.to_string())
            }),
            Method::DrBayes => dr_bayes.clone().unwrap_or_else(|| {
                run_algorithm2(sample, cfg)
                    .map(|p| MethodEstimate::from_posterior(m, &p))
                    .map_err(|e| e.to_string())
            }),
            Method::Or => or_estimator(sample)
                .map(|r| MethodEstimate::from_frequentist(m, &r, alpha))
                .map_err(|e| e.to_string()),
            Method::Dr => with_riesz(
                &|r| {
                    let (mhat, _) = control_ols(sample)?;
                    dr_estimator(sample, r, &mhat)
                },
                m,
            ),
            Method::IpwHt => with_riesz(&|r| ipw_ht(sample, r), m),
            Method::IpwHajek => with_riesz(&|r| ipw_hajek(sample, r), m),
            Method::Twfe => match panel {
                Some(p) => twfe(p)
                    .map(|r| MethodEstimate::from_frequentist(m, &r, alpha))
                    .map_err(|e| e.to_string()),
                None => Err("twfe needs the two-period panel".to_string()),
            },
        })
        .collect();
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_method_lists() {
        assert_eq!(
            Method::parse_list("bayes, dr-bayes,bayes").unwrap(),
            vec![Method::Bayes, Method::DrBayes]
        );
        let err = Method::parse_list("dml").unwrap_err().to_string();
        assert!(err.contains("ipw-hajek"));
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
    }
}
