//! Inverse-odds and entropy-balancing weights, with diagnostics.

mod entropy;
mod feasibility;

pub use entropy::{entropy_balance, entropy_balance_with, EntropyOptions};
pub use feasibility::{feasibility_check, Feasibility};

use serde::{Deserialize, Serialize};

use crate::data::{BalanceMatrix, BalanceSpec, Dataset, Estimand};
use crate::error::{Error, Result};
use crate::glm::{self, Design, GlmFit, GlmOptions, Link};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Iow,
    IowNormalized,
    Maic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub kind: WeightKind,
    /// One weight per weighted row, in dataset order.
    pub weights: Vec<f64>,
    /// Entropy-balancing dual on the centred scale.
    pub dual: Option<Vec<f64>>,
    pub ess: f64,
    pub sum: f64,
}

impl WeightSet {
    fn from_raw(kind: WeightKind, weights: Vec<f64>) -> Result<Self> {
        let ess = effective_sample_size(&weights)?;
        Ok(Self {
            kind,
            sum: weights.iter().sum(),
            weights,
            dual: None,
            ess,
        })
    }

    /// The same weights rescaled to sum to one.
    pub fn normalized(&self) -> Self {
        let kind = match self.kind {
            WeightKind::Iow => WeightKind::IowNormalized,
            k => k,
        };
        let weights: Vec<f64> = self.weights.iter().map(|w| w / self.sum).collect();
        Self {
            kind,
            sum: weights.iter().sum(),
            weights,
            dual: self.dual.clone(),
            ess: self.ess,
        }
    }
}

/// `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if !(s2 > 0.0) || !s.is_finite() {
        return Err(Error::Invalid(
            "effective sample size needs a positive weight".into(),
        ));
    }
    Ok(s * s / s2)
}

/// Optional trimming of inverse-odds weights. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IowOptions {
    /// Caps weights at this upper quantile of their distribution.
    pub truncate_quantile: Option<f64>,
}

/// Logistic model for trial membership on the balance functions, fitted on
/// all rows.
pub fn fit_propensity(data: &Dataset, spec: &BalanceSpec, start: Option<&[f64]>) -> Result<GlmFit> {
    if data.n1() == 0 {
        return Err(Error::EmptyGroup("trial"));
    }
    if data.n0() == 0 {
        return Err(Error::EmptyGroup("control"));
    }
    spec.check_width(data.p())?;
    let design = Design::from_terms(spec, data, 0..data.n());
    let s: Vec<f64> = (0..data.n()).map(|i| f64::from(data.source(i))).collect();
    let opts = GlmOptions {
        start: start.map(<[f64]>::to_vec),
        ..GlmOptions::default()
    };
    glm::fit_bernoulli_with(&design, &s, None, Link::Logit, &opts)
}

/// Odds weights from a fitted propensity model: `(1 - e)/e` on trial rows
/// for the ATC, `e/(1 - e)` on control rows for the ATT.
pub fn odds_weights(
    fit: &GlmFit,
    data: &Dataset,
    spec: &BalanceSpec,
    estimand: Estimand,
) -> Result<Vec<f64>> {
    let k = spec.len() + 1;
    let mut row = vec![0.0; k];
    row[0] = 1.0;
    let group = match estimand {
        Estimand::Atc => data.group(1),
        Estimand::Att => data.group(0),
    };
    group
        .map(|i| {
            spec.eval_into(data.covariate_row(i), &mut row[1..]);
            let eta = fit.linear_predictor(&row);
            // exp(-eta) is the odds of control membership
            let w = match estimand {
                Estimand::Atc => (-eta).exp(),
                Estimand::Att => eta.exp(),
            };
            if w.is_finite() && w > 0.0 {
                Ok(w)
            } else {
                Err(Error::NonOverlap { row: i })
            }
        })
        .collect()
}

pub fn iow_weights(data: &Dataset, spec: &BalanceSpec, normalize: bool) -> Result<WeightSet> {
    iow_weights_for(data, spec, normalize, Estimand::Atc, &IowOptions::default())
}

pub fn iow_weights_for(
    data: &Dataset,
    spec: &BalanceSpec,
    normalize: bool,
    estimand: Estimand,
    opts: &IowOptions,
) -> Result<WeightSet> {
    let fit = fit_propensity(data, spec, None)?;
    let mut w = odds_weights(&fit, data, spec, estimand)?;
    if let Some(q) = opts.truncate_quantile {
        truncate(&mut w, q)?;
    }
    let set = WeightSet::from_raw(WeightKind::Iow, w)?;
    Ok(if normalize { set.normalized() } else { set })
}

fn truncate(w: &mut [f64], q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Invalid(format!("truncation quantile {q} outside (0, 1]")));
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cap = crate::stats::quantile_sorted(&sorted, q);
    w.iter_mut().for_each(|v| *v = v.min(cap));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub term: String,
    pub target: f64,
    pub unweighted: f64,
    pub weighted: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub terms: Vec<BalanceRow>,
    pub max_gap: f64,
}

/// Weighted moments of the trial balance functions against the target.
pub fn balance_report(
    weights: &[f64],
    c: &BalanceMatrix,
    target: &[f64],
    labels: &[String],
) -> Result<BalanceReport> {
    if weights.len() != c.rows() || target.len() != c.cols() {
        return Err(Error::Dimension(format!(
            "{} weights, {} rows, {} targets, {} balance functions",
            weights.len(),
            c.rows(),
            target.len(),
            c.cols()
        )));
    }
    let raw = c.column_means();
    let weighted = c.weighted_means(weights);
    let terms: Vec<BalanceRow> = (0..c.cols())
        .map(|j| BalanceRow {
            term: labels.get(j).cloned().unwrap_or_else(|| format!("c{}", j + 1)),
            target: target[j],
            unweighted: raw[j],
            weighted: weighted[j],
            gap: (weighted[j] - target[j]).abs(),
        })
        .collect();
    let max_gap = terms.iter().map(|t| t.gap).fold(0.0, f64::max);
    Ok(BalanceReport { terms, max_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ess_examples() {
        assert_abs_diff_eq!(effective_sample_size(&[2.0; 7]).unwrap(), 7.0, epsilon = 1e-12);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(effective_sample_size(&[0.25, 0.75]).unwrap(), 1.6, epsilon = 1e-12);
        assert!(effective_sample_size(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn odds_weight_examples() {
        // e = 0.25 => eta = logit(0.25)
        let fit = GlmFit {
            coefficients: vec![glm::logit(0.25)],
            link: Link::Logit,
            converged: true,
            iterations: 0,
            design_columns: vec![],
            loglik: 0.0,
        };
        let rows = vec![
            SubjectRecord {
                source: 1,
                treatment: 1,
                covariates: vec![],
                outcome: Some(1),
            },
            SubjectRecord {
                source: 0,
                treatment: 0,
                covariates: vec![],
                outcome: Some(0),
            },
        ];
        let d = Dataset::from_records(rows, false).unwrap();
        let spec = BalanceSpec::main_effects(0);
        let w = odds_weights(&fit, &d, &spec, Estimand::Atc).unwrap();
        assert_abs_diff_eq!(w[0], 3.0, epsilon = 1e-12);
        let w = odds_weights(&fit, &d, &spec, Estimand::Att).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_groups_give_uniform_weights() {
        let xs = [0.3, -1.2, 2.0, 0.7, -0.1];
        let rows: Vec<SubjectRecord> = [1u8, 0]
            .iter()
            .flat_map(|&s| {
                xs.iter().map(move |&x| SubjectRecord {
                    source: s,
                    treatment: s,
                    covariates: vec![x],
                    outcome: Some(u8::from(x > 0.0)),
                })
            })
            .collect();
        let d = Dataset::from_records(rows, false).unwrap();
        let w = iow_weights(&d, &BalanceSpec::main_effects(1), false).unwrap();
        for v in &w.weights {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-9);
        }
        let w = iow_weights(&d, &BalanceSpec::main_effects(1), true).unwrap();
        assert_eq!(w.kind, WeightKind::IowNormalized);
        for v in &w.weights {
            assert_abs_diff_eq!(*v, 0.2, epsilon = 1e-9);
        }
    }

    #[test]
    fn report_of_uniform_weights_matches_raw_means() {
        let c = BalanceMatrix::new(1, vec![1.0, 2.0, 6.0]);
        let r = balance_report(&[1.0, 1.0, 1.0], &c, &[3.0], &["x".into()]).unwrap();
        assert_eq!(r.terms[0].weighted, r.terms[0].unweighted);
        assert_eq!(r.max_gap, 0.0);
    }
}
