//! Simulation laboratory: scenario generation, true estimands, and
//! replicated performance studies of the estimator battery.

mod dgm;

pub use dgm::{generate, raw_transforms, true_estimand, Dgm, Generated, Scenario, P};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BalanceSpec, Estimand};
use crate::error::{Error, Result};
use crate::estimators::{Battery, MethodId};
use crate::exec::Execution;
use crate::inference::{bootstrap_battery, BootstrapConfig};
use crate::rng;
use crate::stats;
use crate::weighting;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub null_effect: bool,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// `None` skips interval estimation (bias and ESE only).
    pub bootstrap: Option<BootstrapConfig>,
    pub methods: Vec<MethodId>,
}

impl StudyConfig {
    /// All 16 estimators with `B` bootstrap resamples per replication
    /// (`b = 0` disables intervals).
    pub fn new(scenario: Scenario, n: usize, replications: usize, b: usize, seed: u64) -> Self {
        Self {
            scenario,
            null_effect: false,
            n,
            replications,
            seed,
            bootstrap: (b > 0).then(|| BootstrapConfig {
                b,
                seed,
                ..BootstrapConfig::default()
            }),
            methods: MethodId::battery(),
        }
    }

    pub fn dgm(&self) -> Dgm {
        Dgm {
            scenario: self.scenario,
            null_effect: self.null_effect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorPerformance {
    pub id: String,
    /// `None` when every replication failed.
    pub bias: Option<f64>,
    pub ese: Option<f64>,
    pub coverage: Option<f64>,
    pub mean_ci_width: Option<f64>,
    pub mcse_bias: Option<f64>,
    pub mcse_ese: Option<f64>,
    pub mcse_coverage: Option<f64>,
    /// Replications without a point estimate.
    pub n_failed: usize,
    /// Replications with a point estimate but no interval.
    pub n_failed_intervals: usize,
    pub status: String,
    /// Point estimate per replication, in replication order.
    pub points: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    /// Mean histogram overlap coefficient of the fitted trial-membership
    /// linear predictor between the two groups. Diagnostic only.
    pub fitted_score_ovl: Option<f64>,
    pub mean_trial_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub config: StudyConfig,
    pub truth: f64,
    pub regenerations: usize,
    pub overlap: OverlapSummary,
    pub estimators: Vec<EstimatorPerformance>,
}

impl PerformanceReport {
    pub fn get(&self, id: &str) -> Option<&EstimatorPerformance> {
        self.estimators.iter().find(|e| e.id == id)
    }

    /// One row per estimator, in the column order of the JSON report.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut out = String::from(
            "estimator,bias,ese,coverage,mean_ci_width,mcse_bias,mcse_ese,mcse_coverage,n_failed,n_failed_intervals\n",
        );
        for e in &self.estimators {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                e.id,
                f(e.bias),
                f(e.ese),
                f(e.coverage),
                f(e.mean_ci_width),
                f(e.mcse_bias),
                f(e.mcse_ese),
                f(e.mcse_coverage),
                e.n_failed,
                e.n_failed_intervals
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct RepOutcome {
    regenerations: usize,
    trial_share: f64,
    ovl: Option<f64>,
    /// Per method: point and optional (lower, upper).
    methods: Vec<(Option<f64>, Option<(f64, f64)>)>,
}

/// Runs the study against a known true estimand. Replication `r` draws its
/// data and bootstrap resamples from streams keyed by `r`, so the report is
/// identical for any execution strategy.
pub fn run_study(config: &StudyConfig, truth: f64, exec: Execution) -> Result<PerformanceReport> {
    if config.replications == 0 {
        return Err(Error::Invalid("a study needs at least one replication".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::Invalid("no estimators configured".into()));
    }
    if let Some(b) = &config.bootstrap {
        b.validate()?;
    }
    let dgm = config.dgm();
    let battery = Battery::new(config.methods.clone(), Estimand::Atc, BalanceSpec::main_effects(P));

    let reps: Vec<Result<RepOutcome>> = exec.map(config.replications, |r| {
        let g = generate(&dgm, config.n, config.seed, r as u64)?;
        let methods = match &config.bootstrap {
            Some(b) => {
                let bc = BootstrapConfig {
                    seed: rng::derive(b.seed, &[rng::tag::BOOTSTRAP, r as u64]),
                    ..b.clone()
                };
                bootstrap_battery(&g.data, &battery, None, &bc, Execution::Sequential)?
                    .into_iter()
                    .map(|m| {
                        let point = m.estimate.ok().map(|e| e.point);
                        let ci = m.interval.ok().map(|i| (i.lower, i.upper));
                        (point, ci)
                    })
                    .collect()
            }
            None => battery
                .run(&g.data, None)
                .into_iter()
                .map(|m| (m.result.ok().map(|e| e.point), None))
                .collect(),
        };
        Ok(RepOutcome {
            regenerations: g.regenerations,
            trial_share: g.data.n1() as f64 / g.data.n() as f64,
            ovl: fitted_overlap(&g.data),
            methods,
        })
    });
    let reps: Vec<RepOutcome> = reps.into_iter().collect::<Result<_>>()?;

    let with_ci = config.bootstrap.is_some();
    let estimators = config
        .methods
        .iter()
        .enumerate()
        .map(|(j, id)| summarize(id.to_string(), reps.iter().map(|r| r.methods[j]), truth, with_ci))
        .collect();
    let ovls: Vec<f64> = reps.iter().filter_map(|r| r.ovl).collect();
    Ok(PerformanceReport {
        config: config.clone(),
        truth,
        regenerations: reps.iter().map(|r| r.regenerations).sum(),
        overlap: OverlapSummary {
            fitted_score_ovl: (!ovls.is_empty()).then(|| stats::mean(&ovls)),
            mean_trial_share: stats::mean(&reps.iter().map(|r| r.trial_share).collect::<Vec<_>>()),
        },
        estimators,
    })
}

fn summarize(
    id: String,
    outcomes: impl Iterator<Item = (Option<f64>, Option<(f64, f64)>)>,
    truth: f64,
    with_ci: bool,
) -> EstimatorPerformance {
    let outcomes: Vec<_> = outcomes.collect();
    let points: Vec<Option<f64>> = outcomes.iter().map(|o| o.0).collect();
    let ok: Vec<f64> = points.iter().flatten().copied().collect();
    let n_failed = outcomes.len() - ok.len();
    let intervals: Vec<(f64, f64)> = outcomes
        .iter()
        .filter(|o| o.0.is_some())
        .filter_map(|o| o.1)
        .collect();
    let n_failed_intervals = if with_ci { ok.len() - intervals.len() } else { 0 };
    if ok.is_empty() {
        return EstimatorPerformance {
            id,
            bias: None,
            ese: None,
            coverage: None,
            mean_ci_width: None,
            mcse_bias: None,
            mcse_ese: None,
            mcse_coverage: None,
            n_failed,
            n_failed_intervals,
            status: "no data".into(),
            points,
        };
    }
    let r = ok.len() as f64;
    let ese = stats::sample_sd(&ok);
    let (coverage, width, mcse_cov) = if intervals.is_empty() {
        (None, None, None)
    } else {
        let k = intervals.len() as f64;
        let c = intervals.iter().filter(|(l, u)| *l <= truth && truth <= *u).count() as f64 / k;
        let w = intervals.iter().map(|(l, u)| u - l).sum::<f64>() / k;
        (Some(c), Some(w), Some((c * (1.0 - c) / k).sqrt()))
    };
    EstimatorPerformance {
        id,
        bias: Some(stats::mean(&ok) - truth),
        ese: Some(ese),
        coverage,
        mean_ci_width: width,
        mcse_bias: Some(ese / r.sqrt()),
        mcse_ese: (ok.len() > 1).then(|| ese / (2.0 * (r - 1.0)).sqrt()),
        mcse_coverage: mcse_cov,
        n_failed,
        n_failed_intervals,
        status: "ok".into(),
        points,
    }
}

/// Histogram overlap coefficient of two samples over a shared grid.
pub fn overlap_coefficient(a: &[f64], b: &[f64], bins: usize) -> Option<f64> {
    if a.is_empty() || b.is_empty() || bins == 0 {
        return None;
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Some(1.0);
    }
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let k = (((x - lo) / (hi - lo)) * bins as f64) as usize;
            h[k.min(bins - 1)] += 1.0 / xs.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    Some(ha.iter().zip(&hb).map(|(x, y)| x.min(*y)).sum())
}

fn fitted_overlap(data: &crate::data::Dataset) -> Option<f64> {
    let spec = BalanceSpec::main_effects(data.p());
    let fit = weighting::fit_propensity(data, &spec, None).ok()?;
    let lp = |i: usize| {
        let x = data.covariate_row(i);
        fit.coefficients[0] + x.iter().zip(&fit.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    };
    let trial: Vec<f64> = data.group(1).map(lp).collect();
    let control: Vec<f64> = data.group(0).map(lp).collect();
    overlap_coefficient(&trial, &control, 30)
}

/// Cached true estimand, stored as JSON with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub scenario: Scenario,
    pub null_effect: bool,
    pub draws: usize,
    pub seed: u64,
    pub truth: f64,
}

/// Loads the truth from `dir` if a record with the same inputs exists,
/// otherwise computes and stores it.
pub fn cached_truth(dir: &Path, dgm: &Dgm, draws: usize, seed: u64, exec: Execution) -> Result<f64> {
    let name = format!(
        "truth-{}{}-{draws}-{seed}.json",
        dgm.scenario,
        if dgm.null_effect { "-null" } else { "" }
    );
    let path = dir.join(name);
    let io = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(rec) = serde_json::from_str::<TruthRecord>(&text) {
            if rec.scenario == dgm.scenario
                && rec.null_effect == dgm.null_effect
                && rec.draws == draws
                && rec.seed == seed
            {
                return Ok(rec.truth);
            }
        }
    }
    let truth = true_estimand(dgm, draws, seed, exec)?;
    std::fs::create_dir_all(dir).map_err(io)?;
    let rec = TruthRecord {
        scenario: dgm.scenario,
        null_effect: dgm.null_effect,
        draws,
        seed,
        truth,
    };
    let text = serde_json::to_string_pretty(&rec).expect("serializable");
    std::fs::write(&path, text).map_err(io)?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_of_identical_samples_is_one() {
        let a = [0.1, 0.5, 0.9, 0.3];
        assert!((overlap_coefficient(&a, &a, 10).unwrap() - 1.0).abs() < 1e-12);
        let b = [10.0, 11.0];
        assert_eq!(overlap_coefficient(&a, &b, 10).unwrap(), 0.0);
    }

    #[test]
    fn zero_replications_is_an_error() {
        let c = StudyConfig::new(Scenario::Ks1, 100, 0, 0, 1);
        assert!(run_study(&c, 1.0, Execution::Sequential).is_err());
    }

    #[test]
    fn mcse_formulas_follow_from_points() {
        let c = StudyConfig::new(Scenario::Ks1, 200, 12, 0, 9);
        let r = run_study(&c, 1.116, Execution::Sequential).unwrap();
        for e in &r.estimators {
            let pts: Vec<f64> = e.points.iter().flatten().copied().collect();
            let n = pts.len() as f64;
            let ese = stats::sample_sd(&pts);
            assert_eq!(e.ese, Some(ese));
            assert_eq!(e.bias, Some(stats::mean(&pts) - 1.116));
            assert_eq!(e.mcse_bias, Some(ese / n.sqrt()));
            assert_eq!(e.mcse_ese, Some(ese / (2.0 * (n - 1.0)).sqrt()));
        }
    }
}
