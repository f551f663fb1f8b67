//! Nonparametric bootstrap intervals and closed-form standard errors for
//! published aggregates.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AggregateTarget, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{naive_from_counts, Battery, EstimateResult, EstimatorSpec, MethodId};
use crate::exec::Execution;
use crate::normal;
use crate::rng;
use crate::stats;

/// Resamples are abandoned for a method once more than this share fails.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strata {
    /// Resample trial and control rows separately, keeping both sizes.
    #[default]
    BySource,
    /// Resample trial rows only; control rows stay fixed.
    SatOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    #[default]
    Wald,
    Percentile,
}

impl FromStr for CiKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wald" => Ok(CiKind::Wald),
            "percentile" => Ok(CiKind::Percentile),
            other => Err(Error::Invalid(format!("unknown interval type `{other}`"))),
        }
    }
}

impl fmt::Display for CiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiKind::Wald => "wald",
            CiKind::Percentile => "percentile",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub strata: Strata,
    pub ci: CiKind,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            seed: 0,
            strata: Strata::BySource,
            ci: CiKind::Wald,
            level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(Error::Invalid("B must be at least 2".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Invalid(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalResult {
    pub point: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_failed_resamples: usize,
}

impl IntervalResult {
    pub fn wald(point: f64, se: f64, level: f64) -> Self {
        let z = normal::two_sided_critical(level);
        Self {
            point,
            se,
            lower: point - z * se,
            upper: point + z * se,
            n_failed_resamples: 0,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `sqrt(a^2 + b^2)`: the standard error of a difference of independent
/// log-odds.
pub fn se_decomposition(se_mu1: f64, se_mu0: f64) -> f64 {
    se_mu1.hypot(se_mu0)
}

/// Delta-method standard error of `g(p)` for a proportion from `n` subjects.
pub fn delta_se_logodds(p: f64, n: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InfiniteLogOdds(p));
    }
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    Ok((1.0 / (n as f64 * p * (1.0 - p))).sqrt())
}

/// Naive contrast of two published proportions with its delta-method Wald
/// interval.
pub fn naive_delta_interval(
    events1: u64,
    n1: u64,
    events0: u64,
    n0: u64,
    level: f64,
) -> Result<(EstimateResult, IntervalResult)> {
    let est = naive_from_counts(events1, n1, events0, n0)?;
    let se = se_decomposition(
        delta_se_logodds(est.mu_treated, n1 as usize)?,
        delta_se_logodds(est.mu_control, n0 as usize)?,
    );
    let ci = IntervalResult::wald(est.point, se, level);
    Ok((est, ci))
}

/// Row indices of one resample, trial rows first.
pub fn resample_rows<R: Rng>(data: &Dataset, strata: Strata, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let (n1, n0) = (data.n1(), data.n0());
    let trial: Vec<usize> = (0..n1).map(|_| rng.random_range(0..n1)).collect();
    let control: Vec<usize> = match strata {
        Strata::BySource => (0..n0).map(|_| n1 + rng.random_range(0..n0)).collect(),
        Strata::SatOnly => (n1..n1 + n0).collect(),
    };
    (trial, control)
}

/// Per-method bootstrap outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodInterval {
    pub id: MethodId,
    pub estimate: Result<EstimateResult>,
    pub interval: Result<IntervalResult>,
}

/// Bootstraps every method of `battery`. Resample `b` always uses the
/// random stream `(seed, b)`, so results do not depend on `exec`.
///
/// In aggregate-data mode the resampled statistic is `g(mu_0^1)`; its
/// spread is combined with `se(g(mu_0^0))` from the aggregate target.
pub fn bootstrap_battery(
    data: &Dataset,
    battery: &Battery,
    ad: Option<&AggregateTarget>,
    config: &BootstrapConfig,
    exec: Execution,
) -> Result<Vec<MethodInterval>> {
    config.validate()?;
    let ad_mode = data.ad_mode();
    let strata = if ad_mode { Strata::SatOnly } else { config.strata };
    if ad_mode && config.ci == CiKind::Percentile {
        return Err(Error::Invalid(
            "percentile intervals are not available in aggregate-data mode; use wald".into(),
        ));
    }
    let (originals, warm) = battery.run_with(data, ad, None);
    let statistic = |r: &EstimateResult| if ad_mode { r.g_transported() } else { r.point };

    let draws: Vec<Vec<Option<f64>>> = exec.map(config.b, |b| {
        let mut rng = rng::stream(config.seed, &[rng::tag::BOOTSTRAP, b as u64]);
        let (trial, control) = resample_rows(data, strata, &mut rng);
        assert_eq!((trial.len(), control.len()), (data.n1(), data.n0()));
        let Ok(sample) = data.select(&trial, &control) else {
            return vec![None; battery.methods.len()];
        };
        battery
            .run_with(&sample, ad, Some(&warm))
            .0
            .iter()
            .map(|m| m.result.as_ref().ok().map(statistic).filter(|v| v.is_finite()))
            .collect()
    });

    let extra_se = match ad {
        Some(t) if ad_mode => t.se_g_mu0,
        _ => 0.0,
    };
    Ok(originals
        .into_iter()
        .enumerate()
        .map(|(j, original)| {
            let interval = original.result.as_ref().map_err(Clone::clone).and_then(|est| {
                let values: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
                summarize(est.point, &values, config, extra_se)
            });
            MethodInterval {
                id: original.id,
                estimate: original.result,
                interval,
            }
        })
        .collect())
}

fn summarize(point: f64, values: &[f64], config: &BootstrapConfig, extra_se: f64) -> Result<IntervalResult> {
    let failed = config.b - values.len();
    if failed as f64 > MAX_FAILURE_SHARE * config.b as f64 || values.len() < 2 {
        return Err(Error::UnstableBootstrap {
            failed,
            total: config.b,
        });
    }
    let se = se_decomposition(stats::sample_sd(values), extra_se);
    let mut out = match config.ci {
        CiKind::Wald => IntervalResult::wald(point, se, config.level),
        CiKind::Percentile => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let alpha = (1.0 - config.level) / 2.0;
            IntervalResult {
                point,
                se,
                lower: stats::quantile_sorted(&sorted, alpha),
                upper: stats::quantile_sorted(&sorted, 1.0 - alpha),
                n_failed_resamples: 0,
            }
        }
    };
    out.n_failed_resamples = failed;
    Ok(out)
}

/// Bootstrap interval for a single estimator.
pub fn bootstrap(
    data: &Dataset,
    spec: &EstimatorSpec,
    ad: Option<&AggregateTarget>,
    config: &BootstrapConfig,
    exec: Execution,
) -> Result<IntervalResult> {
    let battery = Battery::from_spec(spec);
    bootstrap_battery(data, &battery, ad, config, exec)?
        .pop()
        .expect("one method")
        .interval
}
