//! Pseudo-control covariate profiles drawn from published marginals and a
//! correlation matrix through a Gaussian copula.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{AggregateTarget, Dataset, Marginal};
use crate::error::{Error, Result};
use crate::rng;

/// Largest negative eigenvalue that is clipped rather than rejected.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub marginals: Vec<Marginal>,
    /// Row-major `p x p`.
    pub correlation: Vec<f64>,
    pub m: usize,
    pub seed: u64,
}

impl CopulaSpec {
    pub fn from_target(t: &AggregateTarget) -> Self {
        Self {
            marginals: t.marginals.clone(),
            correlation: t.correlation.clone(),
            m: t.m,
            seed: t.seed,
        }
    }

    pub fn p(&self) -> usize {
        self.marginals.len()
    }
}

/// Checks a correlation matrix and makes it positive semi-definite when it
/// misses by rounding only: negative eigenvalues down to `-PSD_TOLERANCE`
/// are set to zero and the diagonal is rescaled back to one.
pub fn repair_correlation(corr: &[f64], p: usize) -> Result<Vec<f64>> {
    if corr.len() != p * p {
        return Err(Error::Dimension(format!(
            "correlation has {} entries, expected {}",
            corr.len(),
            p * p
        )));
    }
    for i in 0..p {
        if (corr[i * p + i] - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("correlation diagonal entry {i} is not 1")));
        }
        for j in 0..p {
            let (a, b) = (corr[i * p + j], corr[j * p + i]);
            if !a.is_finite() || a.abs() > 1.0 {
                return Err(Error::Invalid(format!("correlation entry ({i},{j}) = {a}")));
            }
            if (a - b).abs() > 1e-12 {
                return Err(Error::Invalid(format!("correlation is not symmetric at ({i},{j})")));
            }
        }
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    let m = DMatrix::from_row_slice(p, p, corr);
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(corr.to_vec());
    }
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPsd(min));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            out[i * p + j] = r[(i, j)] / (r[(i, i)] * r[(j, j)]).sqrt();
        }
    }
    Ok(out)
}

/// Lower factor `L` with `L L' = corr`: Cholesky when possible, otherwise the
/// symmetric eigen factor (for singular matrices).
fn factor(corr: &[f64], p: usize) -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(p, p, corr);
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(m);
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// Draws `M` profiles, row-major `M x p`. Identical specs give identical
/// output.
pub fn simulate_profiles(spec: &CopulaSpec) -> Result<Vec<f64>> {
    let p = spec.p();
    if spec.m == 0 {
        return Err(Error::Invalid("M must be at least 1".into()));
    }
    if p == 0 {
        return Err(Error::Invalid("no marginals".into()));
    }
    for m in &spec.marginals {
        m.validate()?;
    }
    let corr = repair_correlation(&spec.correlation, p)?;
    let l = factor(&corr, p);
    let mut rng = rng::stream(spec.seed, &[rng::tag::COPULA]);
    let mut out = Vec::with_capacity(spec.m * p);
    let mut z = vec![0.0; p];
    for _ in 0..spec.m {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for (i, marginal) in spec.marginals.iter().enumerate() {
            let x: f64 = (0..p).map(|j| l[(i, j)] * z[j]).sum();
            out.push(match *marginal {
                // the normal quantile of the normal cdf is the identity
                Marginal::Normal { mean, sd } => mean + sd * x,
                m => m.quantile(crate::normal::cdf(x)),
            });
        }
    }
    Ok(out)
}

/// Trial rows stacked with pseudo-control profiles in aggregate-data mode.
pub fn make_ad_dataset(sat: &Dataset, profiles: &[f64], target: &AggregateTarget) -> Result<Dataset> {
    if target.marginals.len() != sat.p() {
        return Err(Error::Dimension(format!(
            "aggregate target describes {} covariates, trial rows have {}",
            target.marginals.len(),
            sat.p()
        )));
    }
    sat.with_pseudo_controls(profiles)
}
