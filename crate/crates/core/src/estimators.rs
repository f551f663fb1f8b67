//! The estimator battery: naive, inverse-odds weighting (Horvitz-Thompson
//! and Hajek), entropy balancing, G-computation, augmented weighting, and
//! weighted G-computation, for the ATC and the mirrored ATT.
//!
//! Every estimator transports outcomes observed in one group (the trial for
//! the ATC, the control for the ATT) to the covariate distribution of the
//! other group, then contrasts on the log-odds scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AggregateTarget, BalanceMatrix, BalanceSpec, Dataset, Estimand};
use crate::error::{Error, Result};
use crate::glm::{self, Design, GlmFit, GlmOptions, Link};
use crate::weighting::{self, EntropyOptions, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Iow,
    IowNorm,
    Maic,
    Gcomp,
    DrIow,
    DrIowNorm,
    DrMaic,
    WgcompIowNorm,
    WgcompMaic,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Naive,
        Method::Iow,
        Method::IowNorm,
        Method::Maic,
        Method::Gcomp,
        Method::DrIow,
        Method::DrIowNorm,
        Method::DrMaic,
        Method::WgcompIowNorm,
        Method::WgcompMaic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Iow => "iow",
            Method::IowNorm => "iow_norm",
            Method::Maic => "maic",
            Method::Gcomp => "gcomp",
            Method::DrIow => "dr_iow",
            Method::DrIowNorm => "dr_iow_norm",
            Method::DrMaic => "dr_maic",
            Method::WgcompIowNorm => "wgcomp_iow_norm",
            Method::WgcompMaic => "wgcomp_maic",
        }
    }

    /// Whether the method fits an outcome regression (and so has a link).
    pub fn uses_outcome_model(self) -> bool {
        !matches!(self, Method::Naive | Method::Iow | Method::IowNorm | Method::Maic)
    }

    fn weights(self) -> Option<WeightUse> {
        match self {
            Method::Iow | Method::DrIow => Some(WeightUse::Ht),
            Method::IowNorm | Method::DrIowNorm | Method::WgcompIowNorm => Some(WeightUse::Hajek),
            Method::Maic | Method::DrMaic | Method::WgcompMaic => Some(WeightUse::Maic),
            Method::Naive | Method::Gcomp => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WeightUse {
    Ht,
    Hajek,
    Maic,
}

/// A method paired with its outcome link (links are ignored by methods
/// without an outcome model).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MethodId {
    pub method: Method,
    pub link: Option<Link>,
}

impl MethodId {
    pub fn new(method: Method, link: Link) -> Self {
        Self {
            method,
            link: method.uses_outcome_model().then_some(link),
        }
    }

    /// The 16 estimators: four without an outcome model plus six with one,
    /// under each link.
    pub fn battery() -> Vec<MethodId> {
        let mut ids: Vec<MethodId> = Method::ALL
            .iter()
            .filter(|m| !m.uses_outcome_model())
            .map(|&m| MethodId::new(m, Link::Logit))
            .collect();
        for link in [Link::Logit, Link::Cauchit] {
            ids.extend(
                Method::ALL
                    .iter()
                    .filter(|m| m.uses_outcome_model())
                    .map(|&m| MethodId::new(m, link)),
            );
        }
        ids
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.link {
            Some(l) => write!(f, "{}_{}", self.method, l),
            None => write!(f, "{}", self.method),
        }
    }
}

impl FromStr for MethodId {
    type Err = Error;
    /// Accepts `dr_maic`, `dr_maic_cauchit`, etc. A bare outcome-model
    /// method defaults to the logit link.
    fn from_str(s: &str) -> Result<Self> {
        for link in [Link::Logit, Link::Cauchit] {
            if let Some(base) = s.strip_suffix(&format!("_{link}")) {
                let m: Method = base.parse()?;
                return Ok(MethodId::new(m, link));
            }
        }
        Ok(MethodId::new(s.parse()?, Link::Logit))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub method: Method,
    pub outcome_link: Link,
    pub estimand: Estimand,
    pub balance: BalanceSpec,
    /// Outcome-model terms; the balance terms when `None`.
    pub outcome_terms: Option<BalanceSpec>,
}

impl EstimatorSpec {
    pub fn new(method: Method, balance: BalanceSpec) -> Self {
        Self {
            method,
            outcome_link: Link::Logit,
            estimand: Estimand::Atc,
            balance,
            outcome_terms: None,
        }
    }

    pub fn link(mut self, link: Link) -> Self {
        self.outcome_link = link;
        self
    }

    pub fn estimand(mut self, estimand: Estimand) -> Self {
        self.estimand = estimand;
        self
    }

    pub fn outcome_terms(mut self, terms: BalanceSpec) -> Self {
        self.outcome_terms = Some(terms);
        self
    }

    pub fn id(&self) -> MethodId {
        MethodId::new(self.method, self.outcome_link)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome_converged: Option<bool>,
    /// Largest absolute gap between weighted trial moments and the target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance_max_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub id: MethodId,
    pub estimand: Estimand,
    /// `g(mu_treated) - g(mu_control)`.
    pub point: f64,
    pub mu_treated: f64,
    pub mu_control: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    /// `g` of the mean that the method estimates by transport.
    pub fn g_transported(&self) -> f64 {
        match self.estimand {
            Estimand::Atc => glm::logit(self.mu_treated),
            Estimand::Att => glm::logit(self.mu_control),
        }
    }
}

/// `g(p)` with the range check that turns degenerate means into errors.
pub fn log_odds(p: f64) -> Result<f64> {
    if p > 0.0 && p < 1.0 {
        Ok(glm::logit(p))
    } else {
        Err(Error::InfiniteLogOdds(p))
    }
}

/// Result of one method inside a battery.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub id: MethodId,
    pub result: Result<EstimateResult>,
}

/// Fitted components from a previous run, used as optimizer starting points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    propensity: Option<Vec<f64>>,
    dual: Option<Vec<f64>>,
    outcome: Vec<((Option<WeightUse>, Link), Vec<f64>)>,
}

impl WarmStart {
    fn outcome(&self, key: (Option<WeightUse>, Link)) -> Option<&[f64]> {
        self.outcome
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_slice())
    }
}

/// A set of estimators run with shared fitted components: one propensity
/// fit, one entropy-balancing solve, and one outcome fit per link and
/// weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    pub methods: Vec<MethodId>,
    pub estimand: Estimand,
    pub balance: BalanceSpec,
    pub outcome: BalanceSpec,
}

impl Battery {
    pub fn new(methods: Vec<MethodId>, estimand: Estimand, balance: BalanceSpec) -> Self {
        Self {
            methods,
            estimand,
            outcome: balance.clone(),
            balance,
        }
    }

    pub fn full(estimand: Estimand, balance: BalanceSpec) -> Self {
        Self::new(MethodId::battery(), estimand, balance)
    }

    pub fn with_outcome_terms(mut self, terms: BalanceSpec) -> Self {
        self.outcome = terms;
        self
    }

    pub fn from_spec(spec: &EstimatorSpec) -> Self {
        let b = Self::new(vec![spec.id()], spec.estimand, spec.balance.clone());
        match &spec.outcome_terms {
            Some(t) => b.with_outcome_terms(t.clone()),
            None => b,
        }
    }

    pub fn run(&self, data: &Dataset, ad: Option<&AggregateTarget>) -> Vec<MethodResult> {
        self.run_with(data, ad, None).0
    }

    /// Runs every method; failures are recorded per method. Also returns
    /// the fitted components so a later run on similar data can start from
    /// them.
    pub fn run_with(
        &self,
        data: &Dataset,
        ad: Option<&AggregateTarget>,
        warm: Option<&WarmStart>,
    ) -> (Vec<MethodResult>, WarmStart) {
        let mut cache = Cache::new(self, data, ad, warm);
        let results = self
            .methods
            .iter()
            .map(|&id| MethodResult {
                id,
                result: cache.estimate(id),
            })
            .collect();
        (results, cache.into_warm())
    }
}

/// Runs a single estimator.
pub fn estimate(
    data: &Dataset,
    spec: &EstimatorSpec,
    ad: Option<&AggregateTarget>,
) -> Result<EstimateResult> {
    Battery::from_spec(spec)
        .run(data, ad)
        .pop()
        .expect("one method")
        .result
}

pub fn estimate_naive(data: &Dataset) -> Result<EstimateResult> {
    let spec = EstimatorSpec::new(Method::Naive, BalanceSpec::main_effects(0));
    estimate(data, &spec, None)
}

/// Naive contrast from published counts.
pub fn naive_from_counts(events1: u64, n1: u64, events0: u64, n0: u64) -> Result<EstimateResult> {
    if n1 == 0 || n0 == 0 || events1 > n1 || events0 > n0 {
        return Err(Error::Invalid("counts must satisfy 0 <= events <= n, n >= 1".into()));
    }
    let mu1 = events1 as f64 / n1 as f64;
    let mu0 = events0 as f64 / n0 as f64;
    Ok(EstimateResult {
        id: MethodId::new(Method::Naive, Link::Logit),
        estimand: Estimand::Atc,
        point: log_odds(mu1)? - log_odds(mu0)?,
        mu_treated: mu1,
        mu_control: mu0,
        ess: None,
        diagnostics: Diagnostics::default(),
    })
}

pub fn estimate_iow(data: &Dataset, spec: &BalanceSpec, normalized: bool) -> Result<EstimateResult> {
    let m = if normalized { Method::IowNorm } else { Method::Iow };
    estimate(data, &EstimatorSpec::new(m, spec.clone()), None)
}

pub fn estimate_maic(
    data: &Dataset,
    spec: &BalanceSpec,
    ad: Option<&AggregateTarget>,
) -> Result<EstimateResult> {
    estimate(data, &EstimatorSpec::new(Method::Maic, spec.clone()), ad)
}

pub fn estimate_gcomp(
    data: &Dataset,
    outcome_terms: &BalanceSpec,
    link: Link,
    ad: Option<&AggregateTarget>,
) -> Result<EstimateResult> {
    let spec = EstimatorSpec::new(Method::Gcomp, outcome_terms.clone()).link(link);
    estimate(data, &spec, ad)
}

/// Augmented weighting estimator; `weights` is one of `Iow`, `IowNorm`, `Maic`.
pub fn estimate_dr(
    data: &Dataset,
    weights: Method,
    link: Link,
    spec: &BalanceSpec,
    ad: Option<&AggregateTarget>,
) -> Result<EstimateResult> {
    let m = match weights {
        Method::Iow => Method::DrIow,
        Method::IowNorm => Method::DrIowNorm,
        Method::Maic => Method::DrMaic,
        other => return Err(Error::Invalid(format!("`{other}` is not a weighting method"))),
    };
    estimate(data, &EstimatorSpec::new(m, spec.clone()).link(link), ad)
}

/// G-computation on a weighted outcome fit; `weights` is `IowNorm` or `Maic`.
pub fn estimate_weighted_gcomp(
    data: &Dataset,
    weights: Method,
    link: Link,
    spec: &BalanceSpec,
    ad: Option<&AggregateTarget>,
) -> Result<EstimateResult> {
    let m = match weights {
        Method::IowNorm => Method::WgcompIowNorm,
        Method::Maic => Method::WgcompMaic,
        other => {
            return Err(Error::Invalid(format!(
                "`{other}` weights are not used for weighted G-computation"
            )))
        }
    };
    estimate(data, &EstimatorSpec::new(m, spec.clone()).link(link), ad)
}

pub fn estimate_att(
    data: &Dataset,
    spec: &BalanceSpec,
    method: Method,
    link: Link,
) -> Result<EstimateResult> {
    let spec = EstimatorSpec::new(method, spec.clone())
        .link(link)
        .estimand(Estimand::Att);
    estimate(data, &spec, None)
}

type Shared<T> = Option<Result<T>>;

fn share<T: Clone>(slot: &mut Shared<T>, make: impl FnOnce() -> Result<T>) -> Result<T> {
    slot.get_or_insert_with(make).clone()
}

/// Lazily computed components shared by all methods of one battery run.
struct Cache<'a> {
    battery: &'a Battery,
    data: &'a Dataset,
    ad: Option<&'a AggregateTarget>,
    warm: Option<&'a WarmStart>,
    /// Rows whose outcomes are transported.
    from: std::ops::Range<usize>,
    /// Rows defining the target covariate distribution.
    to: std::ops::Range<usize>,
    setup: Shared<()>,
    y_from: Shared<Vec<f64>>,
    mean_other: Shared<f64>,
    propensity: Shared<(GlmFit, Vec<f64>)>,
    balance: Shared<(WeightSet, f64)>,
    designs: Shared<(Design, Design)>,
    fits: Vec<((Option<WeightUse>, Link), Result<(GlmFit, f64)>)>,
}

impl<'a> Cache<'a> {
    fn new(
        battery: &'a Battery,
        data: &'a Dataset,
        ad: Option<&'a AggregateTarget>,
        warm: Option<&'a WarmStart>,
    ) -> Self {
        let (from, to) = match battery.estimand {
            Estimand::Atc => (data.group(1), data.group(0)),
            Estimand::Att => (data.group(0), data.group(1)),
        };
        Self {
            battery,
            data,
            ad,
            warm,
            from,
            to,
            setup: None,
            y_from: None,
            mean_other: None,
            propensity: None,
            balance: None,
            designs: None,
            fits: Vec::new(),
        }
    }

    fn into_warm(self) -> WarmStart {
        let mut warm = WarmStart::default();
        if let Some(Ok((fit, _))) = &self.propensity {
            warm.propensity = Some(fit.coefficients.clone());
        }
        if let Some(Ok((w, _))) = &self.balance {
            warm.dual = w.dual.clone();
        }
        for (key, fit) in &self.fits {
            if let Ok((f, _)) = fit {
                warm.outcome.push((*key, f.coefficients.clone()));
            }
        }
        warm
    }

    fn check_setup(&mut self) -> Result<()> {
        let (data, ad, estimand) = (self.data, self.ad, self.battery.estimand);
        share(&mut self.setup, || {
            if data.n1() == 0 {
                return Err(Error::EmptyGroup("trial"));
            }
            if data.n0() == 0 {
                return Err(Error::EmptyGroup("control"));
            }
            if data.ad_mode() {
                if estimand == Estimand::Att {
                    return Err(Error::AttRequiresControlIpd);
                }
                if ad.is_none() {
                    return Err(Error::Invalid(
                        "aggregate-data mode needs an aggregate target".into(),
                    ));
                }
            }
            Ok(())
        })
    }

    fn y_from(&mut self) -> Result<Vec<f64>> {
        let (data, source) = (self.data, u8::from(self.battery.estimand == Estimand::Atc));
        share(&mut self.y_from, || data.group_outcomes(source))
    }

    /// Observed mean of the non-transported arm: the control mean for the
    /// ATC (from the aggregate target in aggregate-data mode) and the trial
    /// mean for the ATT.
    fn mean_other(&mut self) -> Result<f64> {
        let (data, ad, estimand) = (self.data, self.ad, self.battery.estimand);
        share(&mut self.mean_other, || match (estimand, ad) {
            (Estimand::Atc, Some(t)) if data.ad_mode() => Ok(t.control_mean_outcome),
            (Estimand::Atc, _) => Ok(crate::stats::mean(&data.group_outcomes(0)?)),
            (Estimand::Att, _) => Ok(crate::stats::mean(&data.group_outcomes(1)?)),
        })
    }

    fn propensity(&mut self) -> Result<(GlmFit, Vec<f64>)> {
        let (data, spec, estimand) = (self.data, &self.battery.balance, self.battery.estimand);
        let start = self.warm.and_then(|w| w.propensity.as_deref());
        share(&mut self.propensity, || {
            let fit = weighting::fit_propensity(data, spec, start)?;
            let w = weighting::odds_weights(&fit, data, spec, estimand)?;
            Ok((fit, w))
        })
    }

    fn balance(&mut self) -> Result<(WeightSet, f64)> {
        let (data, ad, spec) = (self.data, self.ad, &self.battery.balance);
        let (from, to) = (self.from.clone(), self.to.clone());
        let start = self.warm.and_then(|w| w.dual.as_deref());
        share(&mut self.balance, || {
            spec.check_width(data.p())?;
            let target = match ad {
                Some(t) if data.ad_mode() => {
                    if t.moments.len() != spec.len() {
                        return Err(Error::Dimension(format!(
                            "aggregate target has {} moments for {} balance terms",
                            t.moments.len(),
                            spec.len()
                        )));
                    }
                    t.moments.clone()
                }
                _ => spec.matrix(data, to.clone()).column_means(),
            };
            let c: BalanceMatrix = spec.matrix(data, from);
            let w = weighting::entropy_balance_with(&c, &target, &EntropyOptions::default(), start)
                .or_else(|e| match (start, e) {
                    (Some(_), Error::InfeasibleBalance(_)) => weighting::entropy_balance(&c, &target),
                    (_, e) => Err(e),
                })?;
            let gap = weighting::balance_report(&w.weights, &c, &target, &[])?.max_gap;
            Ok((w, gap))
        })
    }

    fn designs(&mut self) -> Result<(Design, Design)> {
        let (data, spec) = (self.data, &self.battery.outcome);
        let (from, to) = (self.from.clone(), self.to.clone());
        share(&mut self.designs, || {
            spec.check_width(data.p())?;
            Ok((
                Design::from_terms(spec, data, from),
                Design::from_terms(spec, data, to),
            ))
        })
    }

    /// Weights over the transported rows, as used by the estimator: `w/n_to`
    /// (Horvitz-Thompson), `w/sum w` (Hajek), or entropy-balancing weights.
    fn unit_weights(&mut self, kind: WeightUse) -> Result<(Vec<f64>, Diagnostics, f64)> {
        match kind {
            WeightUse::Ht | WeightUse::Hajek => {
                let (fit, w) = self.propensity()?;
                let denom = match kind {
                    WeightUse::Ht => self.to.len() as f64,
                    _ => w.iter().sum(),
                };
                let ess = weighting::effective_sample_size(&w)?;
                let diag = Diagnostics {
                    propensity_converged: Some(fit.converged),
                    ..Diagnostics::default()
                };
                Ok((w.iter().map(|v| v / denom).collect(), diag, ess))
            }
            WeightUse::Maic => {
                let (w, gap) = self.balance()?;
                let diag = Diagnostics {
                    balance_max_gap: Some(gap),
                    ..Diagnostics::default()
                };
                Ok((w.weights, diag, w.ess))
            }
        }
    }

    /// Outcome fit on the transported rows, unweighted or weighted by
    /// `weights`; returns the fit and the mean prediction over the target rows.
    fn outcome(&mut self, weights: Option<WeightUse>, link: Link) -> Result<(GlmFit, f64)> {
        let key = (weights, link);
        if let Some((_, r)) = self.fits.iter().find(|(k, _)| *k == key) {
            return r.clone();
        }
        let r = self.fit_outcome(weights, link);
        self.fits.push((key, r.clone()));
        r
    }

    fn fit_outcome(&mut self, weights: Option<WeightUse>, link: Link) -> Result<(GlmFit, f64)> {
        let y = self.y_from()?;
        let (design_from, design_to) = self.designs()?;
        let w = match weights {
            Some(kind) => Some(self.unit_weights(kind)?.0),
            None => None,
        };
        let start = self
            .warm
            .and_then(|ws| ws.outcome(weights.map_or((None, link), |k| (Some(k), link))))
            .map(<[f64]>::to_vec);
        let opts = GlmOptions {
            start,
            ..GlmOptions::default()
        };
        let fit = glm::fit_bernoulli_with(&design_from, &y, w.as_deref(), link, &opts)?;
        let mean_pred = (0..design_to.rows())
            .map(|i| fit.predict(design_to.row(i)))
            .sum::<f64>()
            / design_to.rows() as f64;
        Ok((fit, mean_pred))
    }

    fn estimate(&mut self, id: MethodId) -> Result<EstimateResult> {
        self.check_setup()?;
        let other = self.mean_other()?;
        let g_other = log_odds(other)?;
        let link = id.link.unwrap_or(Link::Logit);
        let mut diag = Diagnostics::default();
        let mut ess = None;
        let transported = match id.method {
            Method::Naive => {
                let y = self.y_from()?;
                crate::stats::mean(&y)
            }
            Method::Iow | Method::IowNorm | Method::Maic => {
                let kind = id.method.weights().expect("weighting method");
                let y = self.y_from()?;
                let (u, d, e) = self.unit_weights(kind)?;
                diag = d;
                ess = Some(e);
                let mu: f64 = u.iter().zip(&y).map(|(u, y)| u * y).sum();
                if kind == WeightUse::Ht && !(mu > 0.0 && mu < 1.0) {
                    return Err(Error::UnboundedHtMean(mu));
                }
                mu
            }
            Method::Gcomp => {
                let (fit, mean_pred) = self.outcome(None, link)?;
                diag.outcome_converged = Some(fit.converged);
                mean_pred
            }
            Method::DrIow | Method::DrIowNorm | Method::DrMaic => {
                let kind = id.method.weights().expect("weighting method");
                let y = self.y_from()?;
                let (u, d, e) = self.unit_weights(kind)?;
                let (fit, mean_pred) = self.outcome(None, link)?;
                let (design_from, _) = self.designs()?;
                let correction: f64 = (0..design_from.rows())
                    .map(|i| u[i] * (y[i] - fit.predict(design_from.row(i))))
                    .sum();
                diag = d;
                diag.outcome_converged = Some(fit.converged);
                ess = Some(e);
                correction + mean_pred
            }
            Method::WgcompIowNorm | Method::WgcompMaic => {
                let kind = id.method.weights().expect("weighting method");
                let (_, d, e) = self.unit_weights(kind)?;
                let (fit, mean_pred) = self.outcome(Some(kind), link)?;
                diag = d;
                diag.outcome_converged = Some(fit.converged);
                ess = Some(e);
                mean_pred
            }
        };
        let g_transported = log_odds(transported)?;
        let (mu_treated, mu_control, point) = match self.battery.estimand {
            Estimand::Atc => (transported, other, g_transported - g_other),
            Estimand::Att => (other, transported, g_other - g_transported),
        };
        Ok(EstimateResult {
            id,
            estimand: self.battery.estimand,
            point,
            mu_treated,
            mu_control,
            ess,
            diagnostics: diag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;
    use approx::assert_abs_diff_eq;

    fn rows(spec: &[(u8, f64, u8)]) -> Dataset {
        Dataset::from_records(
            spec.iter()
                .map(|&(s, x, y)| SubjectRecord {
                    source: s,
                    treatment: s,
                    covariates: vec![x],
                    outcome: Some(y),
                })
                .collect(),
            false,
        )
        .unwrap()
    }

    fn counts(e1: usize, n1: usize, e0: usize, n0: usize) -> Dataset {
        let mut r = Vec::new();
        for i in 0..n1 {
            r.push((1, 0.0, u8::from(i < e1)));
        }
        for i in 0..n0 {
            r.push((0, 0.0, u8::from(i < e0)));
        }
        rows(&r)
    }

    #[test]
    fn naive_applied_example() {
        let r = estimate_naive(&counts(390, 500, 120, 300)).unwrap();
        assert_eq!(format!("{:.3}", r.point), "1.671");
        let c = naive_from_counts(390, 500, 120, 300).unwrap();
        assert_eq!(c.point, r.point);
        assert_eq!(estimate_naive(&counts(3, 10, 6, 20)).unwrap().point, 0.0);
        assert_eq!(estimate_naive(&counts(1, 2, 1, 2)).unwrap().point, 0.0);
    }

    #[test]
    fn degenerate_control_fails_every_method() {
        let d = rows(&[
            (1, 0.1, 1),
            (1, 0.5, 0),
            (1, 0.9, 1),
            (1, 0.2, 0),
            (0, 0.3, 0),
            (0, 0.6, 0),
            (0, 0.4, 0),
        ]);
        let spec = BalanceSpec::main_effects(1);
        for r in Battery::full(Estimand::Atc, spec).run(&d, None) {
            assert!(matches!(r.result, Err(Error::InfiniteLogOdds(_))), "{}", r.id);
        }
    }

    #[test]
    fn maic_two_row_example() {
        // SAT rows {x=1,y=1},{x=3,y=0}; control mean of x is 2.5
        let d = rows(&[(1, 1.0, 1), (1, 3.0, 0), (0, 2.0, 1), (0, 3.0, 0)]);
        let r = estimate_maic(&d, &BalanceSpec::main_effects(1), None).unwrap();
        assert_abs_diff_eq!(r.mu_treated, 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(r.mu_control, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.point, glm::logit(0.25), epsilon = 1e-9);
    }

    #[test]
    fn method_ids_round_trip() {
        let ids = MethodId::battery();
        assert_eq!(ids.len(), 16);
        for id in ids {
            assert_eq!(id.to_string().parse::<MethodId>().unwrap(), id);
        }
        assert_eq!(
            "gcomp".parse::<MethodId>().unwrap(),
            MethodId::new(Method::Gcomp, Link::Logit)
        );
    }

    #[test]
    fn att_in_ad_mode_is_rejected() {
        let d = Dataset::from_records(
            vec![
                SubjectRecord {
                    source: 1,
                    treatment: 1,
                    covariates: vec![1.0],
                    outcome: Some(1),
                },
                SubjectRecord {
                    source: 0,
                    treatment: 0,
                    covariates: vec![1.0],
                    outcome: None,
                },
            ],
            true,
        )
        .unwrap();
        let err = estimate_att(&d, &BalanceSpec::main_effects(1), Method::Naive, Link::Logit);
        assert_eq!(err, Err(Error::AttRequiresControlIpd));
        assert_eq!(Error::AttRequiresControlIpd.to_string(), "ATT requires control IPD");
    }
}
