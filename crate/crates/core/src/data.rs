//! Observed-data representation: stacked subject-level records, covariate
//! balance functions, aggregate targets, and delimited-file ingestion.
//!
//! A [`Dataset`] always stores the single-arm trial (source = 1) rows first
//! and the external control (source = 0) rows after them. Treatment equals
//! source for every row, so neither is stored per row.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target population of the contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    /// Effect in the external-control population.
    #[default]
    Atc,
    /// Effect in the trial population.
    Att,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Atc => "atc",
            Estimand::Att => "att",
        })
    }
}

impl std::str::FromStr for Estimand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "atc" => Ok(Estimand::Atc),
            "att" => Ok(Estimand::Att),
            other => Err(Error::Invalid(format!("unknown estimand `{other}`"))),
        }
    }
}

/// One subject as read from or written to a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub source: u8,
    pub treatment: u8,
    pub covariates: Vec<f64>,
    pub outcome: Option<u8>,
}

/// Stacked observed data for the single-arm trial plus the external control.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    p: usize,
    n1: usize,
    /// Row-major `n x p`.
    covariates: Vec<f64>,
    outcomes: Vec<Option<u8>>,
    ad_mode: bool,
}

impl Dataset {
    /// Validates `rows` and reorders them into the stacked layout, keeping
    /// the within-group order.
    pub fn from_records(rows: Vec<SubjectRecord>, ad_mode: bool) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.covariates.len());
        for (i, r) in rows.iter().enumerate() {
            if r.source > 1 || r.treatment > 1 {
                return Err(Error::Invalid(format!(
                    "row {i}: source and treatment must be 0 or 1"
                )));
            }
            if r.source != r.treatment {
                return Err(Error::SourceTreatmentMismatch {
                    row: i,
                    source_flag: r.source,
                    treatment: r.treatment,
                });
            }
            if r.covariates.len() != p {
                return Err(Error::Dimension(format!(
                    "row {i} has {} covariates, expected {p}",
                    r.covariates.len()
                )));
            }
        }
        let (sat, ctrl): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.source == 1);
        let n1 = sat.len();
        let mut covariates = Vec::with_capacity((n1 + ctrl.len()) * p);
        let mut outcomes = Vec::with_capacity(n1 + ctrl.len());
        for r in sat.into_iter().chain(ctrl) {
            covariates.extend_from_slice(&r.covariates);
            outcomes.push(r.outcome);
        }
        Self::from_columns(p, n1, covariates, outcomes, ad_mode)
    }

    /// Builds a dataset from already-stacked storage: the first `n1` rows are
    /// the single-arm trial.
    pub fn from_columns(
        p: usize,
        n1: usize,
        covariates: Vec<f64>,
        outcomes: Vec<Option<u8>>,
        ad_mode: bool,
    ) -> Result<Self> {
        let n = outcomes.len();
        if covariates.len() != n * p {
            return Err(Error::Dimension(format!(
                "{} covariate values for {n} rows of width {p}",
                covariates.len()
            )));
        }
        if n1 > n {
            return Err(Error::Dimension(format!("n1 = {n1} exceeds n = {n}")));
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite covariate on row {}",
                pos / p.max(1)
            )));
        }
        for (i, y) in outcomes.iter().enumerate() {
            match y {
                Some(v) if *v > 1 => {
                    return Err(Error::Invalid(format!("row {i}: outcome must be 0 or 1")))
                }
                None if !ad_mode || i < n1 => return Err(Error::MissingOutcome { row: i }),
                Some(_) if ad_mode && i >= n1 => {
                    return Err(Error::Invalid(format!(
                        "row {i}: aggregate-data mode control rows carry no outcome"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            p,
            n1,
            covariates,
            outcomes,
            ad_mode,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }
    pub fn n1(&self) -> usize {
        self.n1
    }
    pub fn n0(&self) -> usize {
        self.n() - self.n1
    }
    /// Number of covariates per row.
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn ad_mode(&self) -> bool {
        self.ad_mode
    }

    pub fn source(&self, i: usize) -> u8 {
        u8::from(i < self.n1)
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn outcome(&self, i: usize) -> Option<u8> {
        self.outcomes[i]
    }

    pub fn record(&self, i: usize) -> SubjectRecord {
        let s = self.source(i);
        SubjectRecord {
            source: s,
            treatment: s,
            covariates: self.covariate_row(i).to_vec(),
            outcome: self.outcomes[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = SubjectRecord> + '_ {
        (0..self.n()).map(|i| self.record(i))
    }

    /// Row indices of one group: `1` for the trial, `0` for the control.
    pub fn group(&self, source: u8) -> std::ops::Range<usize> {
        if source == 1 {
            0..self.n1
        } else {
            self.n1..self.n()
        }
    }

    /// Outcomes of a group as floats. Fails on absent outcomes.
    pub fn group_outcomes(&self, source: u8) -> Result<Vec<f64>> {
        self.group(source)
            .map(|i| {
                self.outcomes[i]
                    .map(f64::from)
                    .ok_or(Error::MissingOutcome { row: i })
            })
            .collect()
    }

    /// New dataset made of the given rows, in the given order. Indices must
    /// list trial rows before control rows.
    pub fn select(&self, trial_rows: &[usize], control_rows: &[usize]) -> Result<Self> {
        let p = self.p;
        let n = trial_rows.len() + control_rows.len();
        let mut covariates = Vec::with_capacity(n * p);
        let mut outcomes = Vec::with_capacity(n);
        for &i in trial_rows {
            debug_assert!(i < self.n1);
            covariates.extend_from_slice(self.covariate_row(i));
            outcomes.push(self.outcomes[i]);
        }
        for &i in control_rows {
            debug_assert!(i >= self.n1);
            covariates.extend_from_slice(self.covariate_row(i));
            outcomes.push(self.outcomes[i]);
        }
        Ok(Self {
            p,
            n1: trial_rows.len(),
            covariates,
            outcomes,
            ad_mode: self.ad_mode,
        })
    }

    /// Trial rows stacked with `profiles` (row-major, width `p`) as
    /// outcome-less pseudo-controls.
    pub fn with_pseudo_controls(&self, profiles: &[f64]) -> Result<Self> {
        let p = self.p;
        if p == 0 || profiles.len() % p != 0 {
            return Err(Error::Dimension(format!(
                "{} profile values do not form rows of width {p}",
                profiles.len()
            )));
        }
        let m = profiles.len() / p;
        if m == 0 {
            return Err(Error::Invalid("no pseudo-control profiles".into()));
        }
        let mut covariates = self.covariates[..self.n1 * p].to_vec();
        covariates.extend_from_slice(profiles);
        let mut outcomes = self.outcomes[..self.n1].to_vec();
        outcomes.extend(std::iter::repeat_n(None, m));
        Self::from_columns(p, self.n1, covariates, outcomes, true)
    }
}

/// One balance function: `x_i^a` or `x_i^a * x_j^b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BalanceTerm {
    pub indices: Vec<usize>,
    pub exponents: Vec<u32>,
}

impl BalanceTerm {
    pub fn power(index: usize, exponent: u32) -> Self {
        Self {
            indices: vec![index],
            exponents: vec![exponent],
        }
    }

    pub fn product(i: usize, j: usize) -> Self {
        Self {
            indices: vec![i, j],
            exponents: vec![1, 1],
        }
    }

    fn canonical(&self) -> Result<Self> {
        if self.indices.is_empty() || self.indices.len() > 2 {
            return Err(Error::Invalid(
                "a balance term uses one or two covariates".into(),
            ));
        }
        if self.indices.len() != self.exponents.len() {
            return Err(Error::Invalid(
                "balance term needs one exponent per index".into(),
            ));
        }
        if self.exponents.contains(&0) {
            return Err(Error::Invalid("balance term exponents must be >= 1".into()));
        }
        if self.indices.len() == 1 {
            return Ok(self.clone());
        }
        let (i, j) = (self.indices[0], self.indices[1]);
        let (a, b) = (self.exponents[0], self.exponents[1]);
        Ok(if i == j {
            Self::power(i, a + b)
        } else if i < j {
            self.clone()
        } else {
            Self {
                indices: vec![j, i],
                exponents: vec![b, a],
            }
        })
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.exponents)
            .map(|(&i, &e)| x[i].powi(e as i32))
            .product()
    }

    /// Human-readable name, e.g. `age^2` or `age*sex`.
    pub fn label(&self, names: &[String]) -> String {
        self.indices
            .iter()
            .zip(&self.exponents)
            .map(|(&i, &e)| {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("x{}", i + 1));
                if e == 1 {
                    name
                } else {
                    format!("{name}^{e}")
                }
            })
            .collect::<Vec<_>>()
            .join("*")
    }
}

/// Ordered list of distinct balance functions `c(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BalanceTerm>", into = "Vec<BalanceTerm>")]
pub struct BalanceSpec {
    terms: Vec<BalanceTerm>,
}

impl TryFrom<Vec<BalanceTerm>> for BalanceSpec {
    type Error = Error;
    fn try_from(terms: Vec<BalanceTerm>) -> Result<Self> {
        Self::new(terms)
    }
}

impl From<BalanceSpec> for Vec<BalanceTerm> {
    fn from(spec: BalanceSpec) -> Self {
        spec.terms
    }
}

impl BalanceSpec {
    pub fn new(terms: Vec<BalanceTerm>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut canonical = Vec::with_capacity(terms.len());
        for t in &terms {
            let c = t.canonical()?;
            if !seen.insert(c.clone()) {
                return Err(Error::Invalid(format!(
                    "duplicated balance term {:?}^{:?}",
                    t.indices, t.exponents
                )));
            }
            canonical.push(c);
        }
        Ok(Self { terms: canonical })
    }

    /// `c(X) = X`.
    pub fn main_effects(p: usize) -> Self {
        Self {
            terms: (0..p).map(|i| BalanceTerm::power(i, 1)).collect(),
        }
    }

    pub fn terms(&self) -> &[BalanceTerm] {
        &self.terms
    }

    /// Number of balance functions `k`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smallest covariate width the spec can be evaluated on.
    pub fn required_width(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.indices.iter())
            .map(|&i| i + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn check_width(&self, p: usize) -> Result<()> {
        if self.required_width() > p {
            return Err(Error::Dimension(format!(
                "balance terms reference covariate {} but rows have {p}",
                self.required_width()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(x)).collect()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(x);
        }
    }

    /// Balance functions evaluated on `rows` of `data`, row-major.
    pub fn matrix(&self, data: &Dataset, rows: std::ops::Range<usize>) -> BalanceMatrix {
        let k = self.len();
        let mut values = vec![0.0; rows.len() * k];
        for (r, i) in rows.enumerate() {
            self.eval_into(data.covariate_row(i), &mut values[r * k..(r + 1) * k]);
        }
        BalanceMatrix::new(k, values)
    }

    pub fn labels(&self, names: &[String]) -> Vec<String> {
        self.terms.iter().map(|t| t.label(names)).collect()
    }
}

/// Row-major matrix of balance-function values, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceMatrix {
    k: usize,
    values: Vec<f64>,
}

impl BalanceMatrix {
    pub fn new(k: usize, values: Vec<f64>) -> Self {
        assert!(k == 0 && values.is_empty() || k > 0 && values.len() % k == 0);
        Self { k, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged balance rows".into()));
        }
        Ok(Self::new(k, rows.concat()))
    }

    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.values.len() / self.k
        }
    }

    pub fn cols(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.k.max(1))
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.rows() as f64;
        let mut m = vec![0.0; self.k];
        for r in self.iter_rows() {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Weighted column means `sum_i w_i c_i / sum_i w_i`.
    pub fn weighted_means(&self, weights: &[f64]) -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        let mut m = vec![0.0; self.k];
        for (r, w) in self.iter_rows().zip(weights) {
            for (a, v) in m.iter_mut().zip(r) {
                *a += w * v;
            }
        }
        m.iter_mut().for_each(|a| *a /= total);
        m
    }
}

/// `theta_j`: mean of the j-th balance function over the control rows.
pub fn target_from_ipd(spec: &BalanceSpec, data: &Dataset) -> Result<Vec<f64>> {
    if data.n0() == 0 {
        return Err(Error::EmptyGroup("control"));
    }
    spec.check_width(data.p())?;
    Ok(spec.matrix(data, data.group(0)).column_means())
}

/// Marginal distribution of one covariate in the aggregate-data setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Bernoulli { prob: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => {
                Ok(())
            }
            Marginal::Bernoulli { prob } if prob > 0.0 && prob < 1.0 => Ok(()),
            other => Err(Error::Invalid(format!("invalid marginal {other:?}"))),
        }
    }

    /// Quantile function at `u` in (0, 1). Bernoulli maps `u > 1 - prob` to 1,
    /// so larger latent values become ones.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * crate::normal::quantile(u),
            Marginal::Bernoulli { prob } => {
                if u > 1.0 - prob {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Raw moment `E[X^e]`.
    pub fn raw_moment(&self, e: u32) -> Option<f64> {
        match *self {
            Marginal::Bernoulli { prob } => Some(prob),
            Marginal::Normal { mean: m, sd: s } => {
                let v = s * s;
                match e {
                    1 => Some(m),
                    2 => Some(m * m + v),
                    3 => Some(m.powi(3) + 3.0 * m * v),
                    4 => Some(m.powi(4) + 6.0 * m * m * v + 3.0 * v * v),
                    _ => None,
                }
            }
        }
    }
}

/// Published summary data for an external control without IPD.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTarget {
    /// `theta` aligned with the balance spec used for weighting.
    pub moments: Vec<f64>,
    pub marginals: Vec<Marginal>,
    /// Row-major `p x p`.
    pub correlation: Vec<f64>,
    /// `mu_0^0`.
    pub control_mean_outcome: f64,
    pub control_n: usize,
    /// Standard error of `g(mu_0^0)`.
    pub se_g_mu0: f64,
    /// Number of simulated pseudo-control profiles.
    pub m: usize,
    pub seed: u64,
}

/// On-disk form of an aggregate target. Moments and the log-odds standard
/// error are derived when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTargetFile {
    pub marginals: Vec<Marginal>,
    pub correlation: Vec<f64>,
    pub control_outcome: f64,
    pub control_n: usize,
    #[serde(rename = "M", default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_g_mu0: Option<f64>,
}

fn default_m() -> usize {
    10_000
}

impl AggregateTargetFile {
    pub fn resolve(&self, spec: &BalanceSpec) -> Result<AggregateTarget> {
        let p = self.marginals.len();
        for m in &self.marginals {
            m.validate()?;
        }
        if self.correlation.len() != p * p {
            return Err(Error::Dimension(format!(
                "correlation has {} entries, expected {}",
                self.correlation.len(),
                p * p
            )));
        }
        crate::pseudo::repair_correlation(&self.correlation, p)?;
        if !(self.control_outcome > 0.0 && self.control_outcome < 1.0) {
            return Err(Error::Invalid("control_outcome must lie in (0, 1)".into()));
        }
        if self.control_n == 0 {
            return Err(Error::EmptyGroup("control"));
        }
        if self.m == 0 {
            return Err(Error::Invalid("M must be at least 1".into()));
        }
        spec.check_width(p)?;
        let moments = match &self.moments {
            Some(m) if m.len() == spec.len() => m.clone(),
            Some(m) => {
                return Err(Error::Dimension(format!(
                    "{} moments for {} balance terms",
                    m.len(),
                    spec.len()
                )))
            }
            None => spec
                .terms()
                .iter()
                .map(|t| match t.indices.as_slice() {
                    [i] => self.marginals[*i].raw_moment(t.exponents[0]).ok_or_else(|| {
                        Error::Invalid(format!(
                            "moment of order {} not derivable from the marginal",
                            t.exponents[0]
                        ))
                    }),
                    _ => Err(Error::Invalid(
                        "product terms need explicit `moments` in the aggregate target".into(),
                    )),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let se_g_mu0 = match self.se_g_mu0 {
            Some(se) if se >= 0.0 => se,
            Some(_) => return Err(Error::Invalid("se_g_mu0 must be >= 0".into())),
            None => crate::inference::delta_se_logodds(self.control_outcome, self.control_n)?,
        };
        Ok(AggregateTarget {
            moments,
            marginals: self.marginals.clone(),
            correlation: self.correlation.clone(),
            control_mean_outcome: self.control_outcome,
            control_n: self.control_n,
            se_g_mu0,
            m: self.m,
            seed: self.seed,
        })
    }
}

/// Column roles in a delimited input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    #[serde(default = "col_source")]
    pub source: String,
    #[serde(default = "col_treatment")]
    pub treatment: String,
    #[serde(default = "col_outcome")]
    pub outcome: String,
    pub covariates: Vec<String>,
}

fn col_source() -> String {
    "source".into()
}
fn col_treatment() -> String {
    "treatment".into()
}
fn col_outcome() -> String {
    "outcome".into()
}

impl ColumnMap {
    pub fn new(covariates: Vec<String>) -> Self {
        Self {
            source: col_source(),
            treatment: col_treatment(),
            outcome: col_outcome(),
            covariates,
        }
    }
}

/// Sidecar JSON configuration that accompanies a data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub covariates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<ColumnRoles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance_terms: Option<BalanceSpec>,
    /// Outcome-model terms; defaults to the balance terms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_terms: Option<BalanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ad_target: Option<AggregateTargetFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    #[serde(default = "col_source")]
    pub source: String,
    #[serde(default = "col_treatment")]
    pub treatment: String,
    #[serde(default = "col_outcome")]
    pub outcome: String,
}

impl DataConfig {
    pub fn from_json_str(text: &str, path: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: e.line(),
            column: format!("char {}", e.column()),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn column_map(&self) -> ColumnMap {
        let roles = self.columns.clone().unwrap_or(ColumnRoles {
            source: col_source(),
            treatment: col_treatment(),
            outcome: col_outcome(),
        });
        ColumnMap {
            source: roles.source,
            treatment: roles.treatment,
            outcome: roles.outcome,
            covariates: self.covariates.clone(),
        }
    }

    pub fn balance(&self) -> BalanceSpec {
        self.balance_terms
            .clone()
            .unwrap_or_else(|| BalanceSpec::main_effects(self.covariates.len()))
    }

    pub fn outcome(&self) -> BalanceSpec {
        self.outcome_terms.clone().unwrap_or_else(|| self.balance())
    }
}

fn parse_flag(text: &str) -> std::result::Result<u8, String> {
    match text.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("expected 0 or 1, found `{other}`")),
    }
}

/// Reads a delimited file with a header row. Outcomes may be empty or `NA`
/// only for control rows of an aggregate-data-mode dataset.
pub fn load_ipd(path: impl AsRef<Path>, schema: &ColumnMap, ad_mode: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    read_ipd(file, &shown, schema, ad_mode)
}

/// [`load_ipd`] over any reader; `name` is used in error messages.
pub fn read_ipd<R: std::io::Read>(
    reader: R,
    name: &str,
    schema: &ColumnMap,
    ad_mode: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: usize, column: &str, message: String| Error::Parse {
        path: name.to_string(),
        line,
        column: column.to_string(),
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, "<header>", e.to_string()))?
        .clone();
    let find = |col: &str| {
        headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| parse_err(1, col, "column not found in header".into()))
    };
    let source_at = find(&schema.source)?;
    let treatment_at = find(&schema.treatment)?;
    let outcome_at = find(&schema.outcome)?;
    let cov_at = schema
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| parse_err(line, "<row>", e.to_string()))?;
        let field = |at: usize, col: &str| {
            record
                .get(at)
                .ok_or_else(|| parse_err(line, col, "missing field".into()))
        };
        let source = parse_flag(field(source_at, &schema.source)?)
            .map_err(|m| parse_err(line, &schema.source, m))?;
        let treatment = parse_flag(field(treatment_at, &schema.treatment)?)
            .map_err(|m| parse_err(line, &schema.treatment, m))?;
        if source != treatment {
            return Err(parse_err(
                line,
                &schema.treatment,
                format!("source/treatment mismatch (source={source}, treatment={treatment})"),
            ));
        }
        let raw_y = field(outcome_at, &schema.outcome)?;
        let outcome = if raw_y.is_empty() || raw_y.eq_ignore_ascii_case("na") {
            if !ad_mode || source == 1 {
                return Err(parse_err(line, &schema.outcome, "missing outcome".into()));
            }
            None
        } else {
            let y = parse_flag(raw_y).map_err(|m| parse_err(line, &schema.outcome, m))?;
            if ad_mode && source == 0 {
                None
            } else {
                Some(y)
            }
        };
        let covariates = cov_at
            .iter()
            .zip(&schema.covariates)
            .map(|(&at, col)| {
                let raw = field(at, col)?;
                let v: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(line, col, format!("`{raw}` is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, col, "non-finite value".into()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(SubjectRecord {
            source,
            treatment,
            covariates,
            outcome,
        });
    }
    Dataset::from_records(rows, ad_mode)
}

/// Writes the dataset with the `source,treatment,outcome,<covariates>` layout.
pub fn write_csv<W: std::io::Write>(data: &Dataset, names: &[String], writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: "<csv writer>".into(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["source".to_string(), "treatment".into(), "outcome".into()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for rec in data.records() {
        let mut fields = vec![
            rec.source.to_string(),
            rec.treatment.to_string(),
            rec.outcome.map(|y| y.to_string()).unwrap_or_default(),
        ];
        // `{:?}` prints the shortest representation that parses back exactly
        fields.extend(rec.covariates.iter().map(|v| format!("{v:?}")));
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv writer>".into(),
        message: e.to_string(),
    })
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Dataset(n1={}, n0={}, p={}{})",
            self.n1,
            self.n0(),
            self.p,
            if self.ad_mode { ", ad-mode" } else { "" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(source: u8, x: &[f64], y: Option<u8>) -> SubjectRecord {
        SubjectRecord {
            source,
            treatment: source,
            covariates: x.to_vec(),
            outcome: y,
        }
    }

    #[test]
    fn stacking_moves_trial_rows_first() {
        let d = Dataset::from_records(
            vec![
                rec(1, &[1.0], Some(1)),
                rec(0, &[2.0], Some(0)),
                rec(1, &[3.0], Some(0)),
            ],
            false,
        )
        .unwrap();
        assert_eq!((d.n1(), d.n0()), (2, 1));
        let sources: Vec<u8> = d.records().map(|r| r.source).collect();
        assert_eq!(sources, vec![1, 1, 0]);
        assert_eq!(d.covariate_row(1), &[3.0]);
        assert_eq!(d.covariate_row(2), &[2.0]);
    }

    #[test]
    fn mismatched_source_and_treatment_is_rejected() {
        let mut r = rec(1, &[1.0], Some(1));
        r.treatment = 0;
        let err = Dataset::from_records(vec![r], false).unwrap_err();
        assert!(matches!(err, Error::SourceTreatmentMismatch { row: 0, .. }));
        assert!(err.to_string().contains("source/treatment mismatch"));
    }

    #[test]
    fn missing_outcome_only_allowed_for_ad_controls() {
        let rows = vec![rec(1, &[1.0], Some(1)), rec(0, &[2.0], None)];
        assert!(matches!(
            Dataset::from_records(rows.clone(), false),
            Err(Error::MissingOutcome { row: 1 })
        ));
        assert!(Dataset::from_records(rows, true).is_ok());
        let rows = vec![rec(1, &[1.0], None)];
        assert!(Dataset::from_records(rows, true).is_err());
    }

    #[test]
    fn eval_balance_examples() {
        let spec = BalanceSpec::main_effects(1);
        assert_eq!(spec.eval(&[3.0]), vec![3.0]);
        let spec =
            BalanceSpec::new(vec![BalanceTerm::power(0, 1), BalanceTerm::power(0, 2)]).unwrap();
        assert_eq!(spec.eval(&[45.0]), vec![45.0, 2025.0]);
        let spec = BalanceSpec::new(vec![BalanceTerm::product(0, 1)]).unwrap();
        assert_eq!(spec.eval(&[2.0, 5.0]), vec![10.0]);
    }

    #[test]
    fn duplicated_terms_are_rejected() {
        let dup = BalanceSpec::new(vec![BalanceTerm::product(0, 1), BalanceTerm::product(1, 0)]);
        assert!(dup.is_err());
        let same_power = BalanceSpec::new(vec![
            BalanceTerm::power(0, 2),
            BalanceTerm {
                indices: vec![0, 0],
                exponents: vec![1, 1],
            },
        ]);
        assert!(same_power.is_err());
    }

    #[test]
    fn target_from_control_rows() {
        let d = Dataset::from_records(
            vec![
                rec(1, &[10.0, 10.0], Some(1)),
                rec(0, &[1.0, 0.0], Some(0)),
                rec(0, &[3.0, 0.0], Some(1)),
            ],
            false,
        )
        .unwrap();
        let spec = BalanceSpec::main_effects(1);
        assert_eq!(target_from_ipd(&spec, &d).unwrap(), vec![2.0]);
        let spec =
            BalanceSpec::new(vec![BalanceTerm::power(0, 1), BalanceTerm::power(0, 2)]).unwrap();
        assert_eq!(target_from_ipd(&spec, &d).unwrap(), vec![2.0, 5.0]);
    }

    #[test]
    fn two_covariate_target_matches_enumeration() {
        let d = Dataset::from_records(
            vec![
                rec(1, &[9.0, 9.0], Some(1)),
                rec(0, &[0.0, 1.0], Some(0)),
                rec(0, &[2.0, 3.0], Some(1)),
            ],
            false,
        )
        .unwrap();
        let spec = BalanceSpec::new(vec![
            BalanceTerm::power(0, 1),
            BalanceTerm::power(1, 1),
            BalanceTerm::product(0, 1),
        ])
        .unwrap();
        // (0+2)/2, (1+3)/2, (0*1 + 2*3)/2
        assert_eq!(target_from_ipd(&spec, &d).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_control_group_has_no_target() {
        let d = Dataset::from_records(vec![rec(1, &[1.0], Some(1))], false).unwrap();
        assert_eq!(
            target_from_ipd(&BalanceSpec::main_effects(1), &d),
            Err(Error::EmptyGroup("control"))
        );
    }

    #[test]
    fn csv_parse_errors_name_row_and_column() {
        let text = "source,treatment,outcome,x1\n1,1,1,0.5\n0,0,0,abc\n";
        let err = read_ipd(
            text.as_bytes(),
            "in.csv",
            &ColumnMap::new(vec!["x1".into()]),
            false,
        )
        .unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "x1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_mismatch_row_is_hard_error() {
        let text = "source,treatment,outcome,x1\n1,0,1,0.5\n";
        let err = read_ipd(
            text.as_bytes(),
            "in.csv",
            &ColumnMap::new(vec!["x1".into()]),
            false,
        )
        .unwrap_err();
        assert!(err.to_string().contains("source/treatment mismatch"));
    }

    #[test]
    fn aggregate_moments_derive_from_marginals() {
        let file = AggregateTargetFile {
            marginals: vec![
                Marginal::Normal {
                    mean: 50.06,
                    sd: 3.24,
                },
                Marginal::Bernoulli { prob: 0.49 },
            ],
            correlation: vec![1.0, 0.03, 0.03, 1.0],
            control_outcome: 0.4,
            control_n: 300,
            m: 100,
            seed: 1,
            moments: None,
            se_g_mu0: None,
        };
        let spec = BalanceSpec::new(vec![
            BalanceTerm::power(0, 1),
            BalanceTerm::power(1, 1),
            BalanceTerm::power(0, 2),
        ])
        .unwrap();
        let t = file.resolve(&spec).unwrap();
        assert_eq!(t.moments[0], 50.06);
        assert_eq!(t.moments[1], 0.49);
        assert!((t.moments[2] - (50.06f64.powi(2) + 3.24f64.powi(2))).abs() < 1e-9);
        assert!((t.se_g_mu0 - 0.118).abs() < 5e-4);
    }
}
