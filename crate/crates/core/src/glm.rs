//! Binary-outcome generalized linear models with logit or cauchit link,
//! fitted by maximum likelihood with optional prior weights.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{BalanceSpec, Dataset};
use crate::error::{Error, Result};
use crate::linalg;

const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Cauchit,
}

impl Link {
    /// `q(p)`.
    pub fn link(self, p: f64) -> f64 {
        match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Cauchit => (PI * (p - 0.5)).tan(),
        }
    }

    /// `q^{-1}(eta)`.
    #[inline]
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => expit(eta),
            Link::Cauchit => 0.5 + eta.atan() / PI,
        }
    }

    /// `d mu / d eta`.
    #[inline]
    pub fn mu_eta(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                let m = expit(eta);
                m * (1.0 - m)
            }
            Link::Cauchit => 1.0 / (PI * (1.0 + eta * eta)),
        }
    }

    #[inline]
    fn mu_eta2(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                let m = expit(eta);
                m * (1.0 - m) * (1.0 - 2.0 * m)
            }
            Link::Cauchit => {
                let d = 1.0 + eta * eta;
                -2.0 * eta / (PI * d * d)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Logit => "logit",
            Link::Cauchit => "cauchit",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Link::Logit),
            "cauchit" => Ok(Link::Cauchit),
            other => Err(Error::Invalid(format!("unknown link `{other}`"))),
        }
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Row-major design matrix whose first column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    cols: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl Design {
    pub fn new(cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 || values.len() % cols != 0 {
            return Err(Error::Dimension(format!(
                "{} values cannot form rows of width {cols}",
                values.len()
            )));
        }
        let labels = std::iter::once("(intercept)".to_string())
            .chain((1..cols).map(|j| format!("c{j}")))
            .collect();
        Ok(Self {
            cols,
            values,
            labels,
        })
    }

    pub fn intercept_only(n: usize) -> Self {
        Self {
            cols: 1,
            values: vec![1.0; n],
            labels: vec!["(intercept)".into()],
        }
    }

    /// Intercept plus the given terms evaluated on `rows`.
    pub fn from_terms(spec: &BalanceSpec, data: &Dataset, rows: std::ops::Range<usize>) -> Self {
        let cols = spec.len() + 1;
        let mut values = vec![0.0; rows.len() * cols];
        for (r, i) in rows.enumerate() {
            let out = &mut values[r * cols..(r + 1) * cols];
            out[0] = 1.0;
            spec.eval_into(data.covariate_row(i), &mut out[1..]);
        }
        let labels = std::iter::once("(intercept)".to_string())
            .chain(spec.terms().iter().map(|t| t.label(&[])))
            .collect();
        Self {
            cols,
            values,
            labels,
        }
    }

    /// Intercept plus terms evaluated on raw covariate rows (row-major, width `p`).
    pub fn from_rows(spec: &BalanceSpec, rows: &[f64], p: usize) -> Self {
        let cols = spec.len() + 1;
        let n = if p == 0 { 0 } else { rows.len() / p };
        let mut values = vec![0.0; n * cols];
        for r in 0..n {
            let out = &mut values[r * cols..(r + 1) * cols];
            out[0] = 1.0;
            spec.eval_into(&rows[r * p..(r + 1) * p], &mut out[1..]);
        }
        let mut d = Self::new(cols, values).expect("cols >= 1");
        d.labels = std::iter::once("(intercept)".to_string())
            .chain(spec.terms().iter().map(|t| t.label(&[])))
            .collect();
        d
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.cols);
        self.labels = labels;
        self
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Copy keeping the listed rows.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self {
            cols: self.cols,
            values,
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub link: Link,
    pub converged: bool,
    pub iterations: usize,
    pub design_columns: Vec<String>,
    pub loglik: f64,
}

impl GlmFit {
    #[inline]
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.link.inverse(self.linear_predictor(row))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmOptions {
    pub max_iter: usize,
    /// Bound on the max-norm of the score divided by the total weight.
    pub tol: f64,
    /// Starting coefficients on the original scale.
    pub start: Option<Vec<f64>>,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            start: None,
        }
    }
}

/// Elementwise `q^{-1}(x_i' beta)`.
pub fn predict_mean(fit: &GlmFit, design: &Design) -> Result<Vec<f64>> {
    if design.cols() != fit.coefficients.len() {
        return Err(Error::Dimension(format!(
            "design has {} columns, fit has {}",
            design.cols(),
            fit.coefficients.len()
        )));
    }
    Ok((0..design.rows()).map(|i| fit.predict(design.row(i))).collect())
}

pub fn fit_bernoulli(
    design: &Design,
    y: &[f64],
    weights: Option<&[f64]>,
    link: Link,
) -> Result<GlmFit> {
    fit_bernoulli_with(design, y, weights, link, &GlmOptions::default())
}

pub fn fit_bernoulli_with(
    design: &Design,
    y: &[f64],
    weights: Option<&[f64]>,
    link: Link,
    opts: &GlmOptions,
) -> Result<GlmFit> {
    let n = design.rows();
    let k = design.cols();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} outcomes for {n} rows", y.len())));
    }
    if n < k {
        return Err(Error::Invalid(format!("{n} rows cannot identify {k} coefficients")));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Dimension(format!("{} weights for {n} rows", w.len())));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid("weights must be finite and nonnegative".into()));
        }
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Invalid("outcomes must be 0 or 1".into()));
    }
    let problem = Standardized::new(design, y, weights)?;
    let start = match &opts.start {
        Some(s) if s.len() == k => Some(problem.to_standard(s)),
        Some(s) => {
            return Err(Error::Dimension(format!(
                "{} starting values for {k} coefficients",
                s.len()
            )))
        }
        None if link == Link::Cauchit => {
            // matched slopes at eta = 0: expit' = 1/4, cauchit' = 1/pi
            let base = problem.newton(Link::Logit, None, opts)?;
            Some(base.b.iter().map(|b| b * PI / 4.0).collect())
        }
        None => None,
    };
    let sol = problem.newton(link, start, opts)?;
    problem.check_separation(link, &sol.b)?;
    Ok(GlmFit {
        coefficients: problem.to_original(&sol.b),
        link,
        converged: sol.converged,
        iterations: sol.iterations,
        design_columns: design.labels().to_vec(),
        loglik: sol.loglik,
    })
}

/// Weighted Bernoulli log-likelihood at original-scale coefficients.
pub fn loglik(design: &Design, y: &[f64], weights: Option<&[f64]>, beta: &[f64], link: Link) -> f64 {
    (0..design.rows())
        .map(|i| {
            let w = weights.map_or(1.0, |w| w[i]);
            let eta: f64 = design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum();
            w * obs_loglik(y[i], link.inverse(eta))
        })
        .sum()
}

/// Analytic gradient of [`loglik`].
pub fn score(design: &Design, y: &[f64], weights: Option<&[f64]>, beta: &[f64], link: Link) -> Vec<f64> {
    let mut g = vec![0.0; design.cols()];
    for i in 0..design.rows() {
        let w = weights.map_or(1.0, |w| w[i]);
        let x = design.row(i);
        let eta: f64 = x.iter().zip(beta).map(|(x, b)| x * b).sum();
        let (a, _, _) = derivs(link, eta, y[i], w);
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += a * xj;
        }
    }
    g
}

#[inline]
fn obs_loglik(y: f64, mu: f64) -> f64 {
    let m = mu.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1.0 {
        m.ln()
    } else {
        (1.0 - m).ln()
    }
}

/// Returns (score factor, observed information factor, expected information
/// factor) for one observation; multiply by `x` / `x x'` for full terms.
#[inline]
fn derivs(link: Link, eta: f64, y: f64, w: f64) -> (f64, f64, f64) {
    match link {
        Link::Logit => {
            let mu = expit(eta);
            let v = mu * (1.0 - mu);
            (w * (y - mu), w * v, w * v)
        }
        Link::Cauchit => {
            let mu = link.inverse(eta).clamp(P_CLAMP, 1.0 - P_CLAMP);
            let d1 = link.mu_eta(eta);
            let d2 = link.mu_eta2(eta);
            let v = mu * (1.0 - mu);
            let r = y - mu;
            let h = d1 / v;
            let dv = (1.0 - 2.0 * mu) * d1;
            let dh = (d2 * v - d1 * dv) / (v * v);
            let fisher = d1 * h;
            (w * r * h, w * (fisher - r * dh), w * fisher)
        }
    }
}

struct Solution {
    b: Vec<f64>,
    converged: bool,
    iterations: usize,
    loglik: f64,
}

/// The fitting problem on centred and scaled non-intercept columns.
struct Standardized<'a> {
    n: usize,
    k: usize,
    z: Vec<f64>,
    y: &'a [f64],
    w: Option<&'a [f64]>,
    total_w: f64,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl<'a> Standardized<'a> {
    fn new(design: &Design, y: &'a [f64], w: Option<&'a [f64]>) -> Result<Self> {
        let n = design.rows();
        let k = design.cols();
        let mut center = vec![0.0; k];
        let mut scale = vec![1.0; k];
        for j in 1..k {
            let mean = (0..n).map(|i| design.row(i)[j]).sum::<f64>() / n as f64;
            let ss = (0..n)
                .map(|i| (design.row(i)[j] - mean).powi(2))
                .sum::<f64>();
            let sd = (ss / n as f64).sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                return Err(Error::Invalid(format!(
                    "design column `{}` is constant",
                    design.labels()[j]
                )));
            }
            center[j] = mean;
            scale[j] = sd;
        }
        let mut z = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = design.row(i);
            z.push(1.0);
            for j in 1..k {
                z.push((row[j] - center[j]) / scale[j]);
            }
        }
        let total_w = w.map_or(n as f64, |w| w.iter().sum());
        if !(total_w > 0.0) {
            return Err(Error::Invalid("weights sum to zero".into()));
        }
        Ok(Self {
            n,
            k,
            z,
            y,
            w,
            total_w,
            center,
            scale,
        })
    }

    fn to_standard(&self, beta: &[f64]) -> Vec<f64> {
        let mut b = beta.to_vec();
        for j in 1..self.k {
            b[0] += beta[j] * self.center[j];
            b[j] = beta[j] * self.scale[j];
        }
        b
    }

    fn to_original(&self, b: &[f64]) -> Vec<f64> {
        let mut beta = b.to_vec();
        for j in 1..self.k {
            beta[j] = b[j] / self.scale[j];
            beta[0] -= beta[j] * self.center[j];
        }
        beta
    }

    #[inline]
    fn zrow(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        self.w.map_or(1.0, |w| w[i])
    }

    fn eta(&self, i: usize, b: &[f64]) -> f64 {
        self.zrow(i).iter().zip(b).map(|(z, b)| z * b).sum()
    }

    fn loglik(&self, link: Link, b: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let w = self.weight(i);
                if w == 0.0 {
                    0.0
                } else {
                    w * obs_loglik(self.y[i], link.inverse(self.eta(i, b)))
                }
            })
            .sum()
    }

    /// Gradient plus observed and expected information (upper triangles
    /// mirrored).
    fn derivatives(&self, link: Link, b: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut g = vec![0.0; k];
        let mut obs = vec![0.0; k * k];
        let mut exp = vec![0.0; k * k];
        let same = link == Link::Logit;
        for i in 0..self.n {
            let w = self.weight(i);
            if w == 0.0 {
                continue;
            }
            let z = self.zrow(i);
            let (a, o, e) = derivs(link, self.eta(i, b), self.y[i], w);
            for j in 0..k {
                g[j] += a * z[j];
                let oz = o * z[j];
                let ez = e * z[j];
                for l in j..k {
                    obs[j * k + l] += oz * z[l];
                    if !same {
                        exp[j * k + l] += ez * z[l];
                    }
                }
            }
        }
        for j in 0..k {
            for l in 0..j {
                obs[j * k + l] = obs[l * k + j];
                exp[j * k + l] = exp[l * k + j];
            }
        }
        if same {
            exp.clone_from(&obs);
        }
        (g, obs, exp)
    }

    fn newton(&self, link: Link, start: Option<Vec<f64>>, opts: &GlmOptions) -> Result<Solution> {
        let k = self.k;
        let mut b = start.unwrap_or_else(|| {
            let ybar = (0..self.n).map(|i| self.weight(i) * self.y[i]).sum::<f64>() / self.total_w;
            let ybar = ybar.clamp(0.01, 0.99);
            let mut b = vec![0.0; k];
            b[0] = link.link(ybar);
            b
        });
        let mut ll = self.loglik(link, &b);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let (g, obs, exp) = self.derivatives(link, &b);
            if linalg::max_abs(&g) / self.total_w < opts.tol {
                converged = true;
                break;
            }
            iterations += 1;
            let step = linalg::solve_spd(&obs, k, &g)
                .or_else(|| linalg::solve_spd(&exp, k, &g))
                .ok_or_else(|| Error::Invalid("singular information matrix".into()))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = b.iter().zip(&step).map(|(b, s)| b + t * s).collect();
                let cand_ll = self.loglik(link, &cand);
                if cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) {
                    b = cand;
                    ll = cand_ll;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            if linalg::norm2(&b) > 1e4 {
                return Err(Error::Separation);
            }
        }
        if !converged {
            let (g, _, _) = self.derivatives(link, &b);
            converged = linalg::max_abs(&g) / self.total_w < opts.tol;
        }
        Ok(Solution {
            b,
            converged,
            iterations,
            loglik: ll,
        })
    }

    /// Diverging coefficients, or large coefficients that fit some
    /// observations perfectly, indicate (quasi-)complete separation.
    fn check_separation(&self, link: Link, b: &[f64]) -> Result<()> {
        let norm = linalg::norm2(b);
        if norm > 1e4 {
            return Err(Error::Separation);
        }
        if norm > 10.0 {
            let perfect = (0..self.n).any(|i| {
                self.weight(i) > 0.0 && (self.y[i] - link.inverse(self.eta(i, b))).abs() < 1e-10
            });
            if perfect {
                return Err(Error::Separation);
            }
        }
        Ok(())
    }
}
