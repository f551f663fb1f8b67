//! Entropy-balancing weights via the dual problem.

use crate::data::BalanceMatrix;
use crate::error::{Error, Result};
use crate::linalg;

use super::feasibility::feasibility_check;
use super::{effective_sample_size, WeightKind, WeightSet};

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyOptions {
    /// Max-norm bound on the balance gap of the standardized columns.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

pub fn entropy_balance(c: &BalanceMatrix, target: &[f64]) -> Result<WeightSet> {
    entropy_balance_with(c, target, &EntropyOptions::default(), None)
}

/// Minimizes `log sum_i exp(c*_i' gamma)` with `c* = c - target`, which has
/// the same minimizer as the sum itself. `start` is a dual on the original
/// scale, e.g. from a previous solve on similar data.
pub fn entropy_balance_with(
    c: &BalanceMatrix,
    target: &[f64],
    opts: &EntropyOptions,
    start: Option<&[f64]>,
) -> Result<WeightSet> {
    let n = c.rows();
    let k = c.cols();
    if target.len() != k {
        return Err(Error::Dimension(format!(
            "target has {} moments for {k} balance functions",
            target.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyGroup("trial"));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite balance target".into()));
    }

    // centre on the target, scale by the sample sd; columns with no spread
    // are either already balanced or impossible
    let mut active = Vec::with_capacity(k);
    let mut scale = vec![1.0; k];
    for j in 0..k {
        let mean = c.iter_rows().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = c.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            scale[j] = sd;
            active.push(j);
        } else if (mean - target[j]).abs() > 1e-10 * (1.0 + target[j].abs()) {
            return Err(infeasible(c, target));
        }
    }
    let q = active.len();
    let mut z = Vec::with_capacity(n * q);
    for r in c.iter_rows() {
        for &j in &active {
            z.push((r[j] - target[j]) / scale[j]);
        }
    }

    let mut gamma: Vec<f64> = match start {
        Some(s) if s.len() == k => active.iter().map(|&j| s[j] * scale[j]).collect(),
        _ => vec![0.0; q],
    };
    if gamma.iter().any(|v| !v.is_finite()) {
        gamma = vec![0.0; q];
    }

    let mut v = vec![0.0; n];
    let mut f = log_sum_exp(&z, q, &gamma, &mut v);
    let mut converged = q == 0;
    for _ in 0..opts.max_iter {
        if converged {
            break;
        }
        // gradient = weighted mean of z, hessian = weighted covariance
        let mut g = vec![0.0; q];
        for (row, vi) in z.chunks_exact(q).zip(&v) {
            for (gj, zj) in g.iter_mut().zip(row) {
                *gj += vi * zj;
            }
        }
        if linalg::max_abs(&g) < opts.tol {
            converged = true;
            break;
        }
        let mut h = vec![0.0; q * q];
        for (row, vi) in z.chunks_exact(q).zip(&v) {
            for a in 0..q {
                let za = vi * row[a];
                for b in a..q {
                    h[a * q + b] += za * row[b];
                }
            }
        }
        for a in 0..q {
            for b in a..q {
                h[a * q + b] -= g[a] * g[b];
                h[b * q + a] = h[a * q + b];
            }
        }
        let Some(step) = linalg::solve_spd(&h, q, &g) else {
            break;
        };
        let mut t = 1.0;
        let mut moved = false;
        let mut trial_v = vec![0.0; n];
        for _ in 0..50 {
            let cand: Vec<f64> = gamma.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let cand_f = log_sum_exp(&z, q, &cand, &mut trial_v);
            if cand_f <= f + 1e-14 * (1.0 + f.abs()) {
                gamma = cand;
                f = cand_f;
                std::mem::swap(&mut v, &mut trial_v);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || linalg::norm2(&gamma) > 1e8 {
            break;
        }
    }

    let gap = max_gap(c, target, &v);
    if !(converged || gap < 1e-9) || !gap.is_finite() {
        return Err(infeasible(c, target));
    }
    let mut dual = vec![0.0; k];
    for (a, &j) in active.iter().enumerate() {
        dual[j] = gamma[a] / scale[j];
    }
    let ess = effective_sample_size(&v)?;
    Ok(WeightSet {
        kind: WeightKind::Maic,
        sum: v.iter().sum(),
        weights: v,
        dual: Some(dual),
        ess,
    })
}

/// Returns `log sum exp(z_i' gamma)` and writes the normalized weights.
fn log_sum_exp(z: &[f64], q: usize, gamma: &[f64], v: &mut [f64]) -> f64 {
    let n = v.len();
    if q == 0 {
        v.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        return (n as f64).ln();
    }
    let mut top = f64::NEG_INFINITY;
    for (row, vi) in z.chunks_exact(q).zip(v.iter_mut()) {
        let e: f64 = row.iter().zip(gamma).map(|(a, b)| a * b).sum();
        *vi = e;
        top = top.max(e);
    }
    if !top.is_finite() {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for vi in v.iter_mut() {
        *vi = (*vi - top).exp();
        total += *vi;
    }
    v.iter_mut().for_each(|x| *x /= total);
    top + total.ln()
}

fn max_gap(c: &BalanceMatrix, target: &[f64], v: &[f64]) -> f64 {
    let mut m = vec![0.0; c.cols()];
    for (r, w) in c.iter_rows().zip(v) {
        for (a, x) in m.iter_mut().zip(r) {
            *a += w * x;
        }
    }
    let total: f64 = v.iter().sum();
    m.iter()
        .zip(target)
        .map(|(a, t)| (a / total - t).abs())
        .fold(0.0, f64::max)
}

fn infeasible(c: &BalanceMatrix, target: &[f64]) -> Error {
    match feasibility_check(c, target) {
        Ok(f) if !f.feasible => Error::InfeasibleBalance(format!(
            "target lies outside the convex hull of the trial balance functions \
             (phase-1 residual {:.3e})",
            f.infeasibility
        )),
        Ok(_) => Error::InfeasibleBalance(
            "target lies on or near the boundary of the convex hull; the dual optimizer diverged"
                .into(),
        ),
        Err(e) => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn column(xs: &[f64]) -> BalanceMatrix {
        BalanceMatrix::new(1, xs.to_vec())
    }

    #[test]
    fn symmetric_target_gives_uniform_weights() {
        let w = entropy_balance(&column(&[1.0, 3.0]), &[2.0]).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn shifted_target_hand_solution() {
        let w = entropy_balance(&column(&[1.0, 3.0]), &[2.5]).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(w.weights[1], 0.75, epsilon = 1e-10);
        assert_abs_diff_eq!(w.sum, 1.0, epsilon = 1e-12);
        // v2 / v1 = exp(2 gamma)
        assert_abs_diff_eq!(w.dual.unwrap()[0], 3f64.ln() / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn outside_hull_is_infeasible() {
        let err = entropy_balance(&column(&[1.0, 3.0]), &[5.0]).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBalance(_)));
    }

    #[test]
    fn constant_column_equal_to_target_is_ignored() {
        let c = BalanceMatrix::new(2, vec![1.0, 7.0, 3.0, 7.0]);
        let w = entropy_balance(&c, &[2.5, 7.0]).unwrap();
        assert_abs_diff_eq!(w.weights[1], 0.75, epsilon = 1e-10);
        assert!(entropy_balance(&c, &[2.5, 6.0]).is_err());
    }
}
