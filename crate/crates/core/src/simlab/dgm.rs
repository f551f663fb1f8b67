//! The four binary-outcome scenarios with correctly specified or
//! misspecified outcome and membership models.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::glm::{expit, logit};
use crate::rng;

pub const P: usize = 4;

/// Which covariate version (raw `X` or transformed `Z`) drives each model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "KS1")]
    Ks1,
    #[serde(rename = "KS2")]
    Ks2,
    #[serde(rename = "KS3")]
    Ks3,
    #[serde(rename = "KS4")]
    Ks4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Ks1, Scenario::Ks2, Scenario::Ks3, Scenario::Ks4];

    /// (outcome uses Z, membership uses Z)
    pub fn transformed(self) -> (bool, bool) {
        match self {
            Scenario::Ks1 => (false, false),
            Scenario::Ks2 => (true, false),
            Scenario::Ks3 => (false, true),
            Scenario::Ks4 => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Ks1 => "KS1",
            Scenario::Ks2 => "KS2",
            Scenario::Ks3 => "KS3",
            Scenario::Ks4 => "KS4",
        }
    }

    fn index(self) -> u64 {
        match self {
            Scenario::Ks1 => 1,
            Scenario::Ks2 => 2,
            Scenario::Ks3 => 3,
            Scenario::Ks4 => 4,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown scenario `{s}`")))
    }
}

/// Data-generating mechanism. `null_effect` zeroes both treatment terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dgm {
    pub scenario: Scenario,
    #[serde(default)]
    pub null_effect: bool,
}

impl Dgm {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            null_effect: false,
        }
    }

    /// Log-odds of trial membership. The sign convention makes trial
    /// members have larger `V1`.
    #[inline]
    pub fn membership_lp(v: &[f64]) -> f64 {
        v[0] - 0.5 * v[1] + 0.25 * v[2] + 0.5 * v[3]
    }

    #[inline]
    pub fn outcome_lp(&self, v: &[f64], t: f64) -> f64 {
        let base = v[0] - 1.5 * v[1] + 0.5 * v[2] - 0.5 * v[3];
        if self.null_effect {
            base
        } else {
            base + t * (1.5 - 0.5 * v[0])
        }
    }
}

/// The raw transforms whose standardized versions form `Z`.
#[inline]
pub fn raw_transforms(x: &[f64]) -> [f64; P] {
    [
        (x[0] / 2.0).exp(),
        x[1] * x[1],
        (x[0] * x[2] + 0.6).powi(3),
        (x[1] + x[3] + 20.0).powi(2),
    ]
}

/// Column-wise `(v - mean) / sd` with the `n - 1` denominator, in place.
fn scale_columns(values: &mut [f64], p: usize) {
    let n = values.len() / p;
    for j in 0..p {
        let mean = (0..n).map(|i| values[i * p + j]).sum::<f64>() / n as f64;
        let ss = (0..n).map(|i| (values[i * p + j] - mean).powi(2)).sum::<f64>();
        let sd = (ss / (n - 1) as f64).sqrt();
        for i in 0..n {
            values[i * p + j] = (values[i * p + j] - mean) / sd;
        }
    }
}

/// One simulated dataset together with what the analyst never sees.
#[derive(Debug, Clone)]
pub struct Generated {
    pub data: Dataset,
    /// Extra draws needed because a previous attempt had a constant `S`.
    pub regenerations: usize,
}

/// Generates replication `rep`. Attempt `a` uses the stream
/// `(seed, scenario, rep, a)`.
pub fn generate(dgm: &Dgm, n: usize, seed: u64, rep: u64) -> Result<Generated> {
    if n < 20 {
        return Err(Error::Invalid(format!("n = {n} is below the minimum of 20")));
    }
    for attempt in 0..1000u64 {
        let mut rng = rng::stream(
            seed,
            &[rng::tag::SCENARIO, dgm.scenario.index(), rep, attempt],
        );
        if let Some(data) = draw(dgm, n, &mut rng)? {
            return Ok(Generated {
                data,
                regenerations: attempt as usize,
            });
        }
    }
    Err(Error::Invalid("membership indicator constant in 1000 attempts".into()))
}

fn draw<R: Rng>(dgm: &Dgm, n: usize, rng: &mut R) -> Result<Option<Dataset>> {
    let mut x = vec![0.0; n * P];
    for v in x.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let mut z = Vec::with_capacity(n * P);
    for row in x.chunks_exact(P) {
        z.extend_from_slice(&raw_transforms(row));
    }
    scale_columns(&mut z, P);
    let (out_z, mem_z) = dgm.scenario.transformed();

    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let vm = if mem_z { &z[i * P..(i + 1) * P] } else { &x[i * P..(i + 1) * P] };
        let vo = if out_z { &z[i * P..(i + 1) * P] } else { &x[i * P..(i + 1) * P] };
        let si = rng.random::<f64>() < expit(Dgm::membership_lp(vm));
        let t = f64::from(u8::from(si));
        let yi = rng.random::<f64>() < expit(dgm.outcome_lp(vo, t));
        s.push(si);
        y.push(u8::from(yi));
    }
    let n1 = s.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == n {
        return Ok(None);
    }
    let mut cov = Vec::with_capacity(n * P);
    let mut out = Vec::with_capacity(n);
    for want in [true, false] {
        for i in (0..n).filter(|&i| s[i] == want) {
            cov.extend_from_slice(&x[i * P..(i + 1) * P]);
            out.push(Some(y[i]));
        }
    }
    Dataset::from_columns(P, n1, cov, out, false).map(Some)
}

/// Rows per Monte Carlo chunk; fixed so results do not depend on threads.
const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: [f64; P],
    m2: [f64; P],
}

impl Moments {
    fn push(&mut self, v: &[f64; P]) {
        self.n += 1.0;
        for j in 0..P {
            let d = v[j] - self.mean[j];
            self.mean[j] += d / self.n;
            self.m2[j] += d * (v[j] - self.mean[j]);
        }
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let mut out = Moments {
            n,
            ..Moments::default()
        };
        for j in 0..P {
            let d = other.mean[j] - self.mean[j];
            out.mean[j] = self.mean[j] + d * other.n / n;
            out.m2[j] = self.m2[j] + other.m2[j] + d * d * self.n * other.n / n;
        }
        out
    }
}

fn chunk_x(seed: u64, chunk: usize, rows: usize, out: &mut Vec<f64>) {
    let mut rng = rng::stream(seed, &[rng::tag::TRUTH, chunk as u64]);
    out.clear();
    out.extend((0..rows * P).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
}

/// Monte Carlo ATC on the log-odds scale over `draws` covariate vectors.
///
/// Each draw is weighted by its probability of external-control membership,
/// which targets the same expectation as sampling membership and keeping the
/// controls, with less noise. The transformed covariates are standardized
/// with moments from the same draws, computed in a first pass.
pub fn true_estimand(dgm: &Dgm, draws: usize, seed: u64, exec: Execution) -> Result<f64> {
    if draws < 2 {
        return Err(Error::Invalid("need at least two draws".into()));
    }
    let chunks = draws.div_ceil(CHUNK);
    let rows = |c: usize| CHUNK.min(draws - c * CHUNK);

    let moments = exec
        .map(chunks, |c| {
            let mut x = Vec::new();
            chunk_x(seed, c, rows(c), &mut x);
            let mut m = Moments::default();
            for row in x.chunks_exact(P) {
                m.push(&raw_transforms(row));
            }
            m
        })
        .into_iter()
        .fold(Moments::default(), Moments::merge);
    let mean = moments.mean;
    let sd: Vec<f64> = moments.m2.iter().map(|m2| (m2 / (moments.n - 1.0)).sqrt()).collect();

    let (out_z, mem_z) = dgm.scenario.transformed();
    let sums = exec.map(chunks, |c| {
        let mut x = Vec::new();
        chunk_x(seed, c, rows(c), &mut x);
        let (mut w, mut s1, mut s0) = (0.0, 0.0, 0.0);
        for row in x.chunks_exact(P) {
            let raw = raw_transforms(row);
            let z: [f64; P] = std::array::from_fn(|j| (raw[j] - mean[j]) / sd[j]);
            let vm: &[f64] = if mem_z { &z } else { row };
            let vo: &[f64] = if out_z { &z } else { row };
            let p0 = expit(-Dgm::membership_lp(vm));
            w += p0;
            s1 += p0 * expit(dgm.outcome_lp(vo, 1.0));
            s0 += p0 * expit(dgm.outcome_lp(vo, 0.0));
        }
        (w, s1, s0)
    });
    let (w, s1, s0) = sums
        .into_iter()
        .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(logit(s1 / w) - logit(s0 / w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let dgm = Dgm::new(Scenario::Ks3);
        let a = generate(&dgm, 200, 5, 3).unwrap();
        let b = generate(&dgm, 200, 5, 3).unwrap();
        assert_eq!(a.data, b.data);
        let c = generate(&dgm, 200, 5, 4).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn membership_is_roughly_balanced() {
        let dgm = Dgm::new(Scenario::Ks1);
        let g = generate(&dgm, 200, 1, 0).unwrap();
        let share = g.data.n1() as f64 / 200.0;
        assert!((share - 0.5).abs() < 0.15, "{share}");
    }

    #[test]
    fn scaled_columns_are_standardized() {
        let mut v: Vec<f64> = (0..40).map(|i| ((i * 7919) % 101) as f64).collect();
        scale_columns(&mut v, 4);
        for j in 0..4 {
            let col: Vec<f64> = v.iter().skip(j).step_by(4).copied().collect();
            assert!(crate::stats::mean(&col).abs() < 1e-12);
            assert!((crate::stats::sample_sd(&col) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_small_n_is_rejected() {
        assert!(generate(&Dgm::new(Scenario::Ks1), 10, 1, 0).is_err());
    }

    #[test]
    fn null_scenario_truth_is_zero() {
        let dgm = Dgm {
            scenario: Scenario::Ks2,
            null_effect: true,
        };
        let t = true_estimand(&dgm, 200_000, 3, Execution::Sequential).unwrap();
        assert!(t.abs() < 1e-12);
    }
}
