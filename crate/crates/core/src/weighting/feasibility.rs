//! Convex-hull membership by a phase-1 linear program.

use serde::{Deserialize, Serialize};

use crate::data::BalanceMatrix;
use crate::error::{Error, Result};

const EPS: f64 = 1e-11;
const FEASIBLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// Convex weights reproducing the target, when feasible.
    pub certificate: Option<Vec<f64>>,
    /// Phase-1 objective at the optimum, on standardized columns.
    pub infeasibility: f64,
}

/// Decides whether `target` lies in the convex hull of the rows of `c`.
///
/// Columns are centred on the target and scaled by their spread before the
/// program is solved, so the tolerance is unit-free.
pub fn feasibility_check(c: &BalanceMatrix, target: &[f64]) -> Result<Feasibility> {
    let n = c.rows();
    let k = c.cols();
    if target.len() != k {
        return Err(Error::Dimension(format!(
            "target has {} moments for {k} balance functions",
            target.len()
        )));
    }
    if n == 0 {
        return Ok(Feasibility {
            feasible: false,
            certificate: None,
            infeasibility: f64::INFINITY,
        });
    }
    if c.iter_rows().flatten().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite balance values".into()));
    }
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let s = c
                .iter_rows()
                .map(|r| (r[j] - target[j]).abs())
                .fold(0.0, f64::max);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();

    // rows: sum(lambda) = 1, then one per balance function with rhs 0
    let m = k + 1;
    let width = n + m + 1;
    let rhs = width - 1;
    let mut t = vec![0.0; m * width];
    for i in 0..n {
        t[i] = 1.0;
        let row = c.row(i);
        for j in 0..k {
            t[(j + 1) * width + i] = (row[j] - target[j]) / scale[j];
        }
    }
    for r in 0..m {
        t[r * width + n + r] = 1.0;
    }
    t[rhs] = 1.0;
    let mut basis: Vec<usize> = (n..n + m).collect();

    // reduced costs of the phase-1 objective: minimize the sum of artificials
    let mut cost = vec![0.0; width];
    for r in 0..m {
        for col in 0..width {
            if col < n || col == rhs {
                cost[col] -= t[r * width + col];
            }
        }
    }

    let max_pivots = 50 * (n + m);
    for _ in 0..max_pivots {
        // Bland: lowest-index improving column
        let Some(enter) = (0..n + m).find(|&j| cost[j] < -EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let a = t[r * width + enter];
            if a > EPS {
                let ratio = t[r * width + rhs] / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - EPS
                            || (ratio <= lratio + EPS && basis[r] < basis[lr])
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        let Some((pr, _)) = leave else {
            // unbounded cannot happen for a phase-1 program
            break;
        };
        let pivot = t[pr * width + enter];
        for col in 0..width {
            t[pr * width + col] /= pivot;
        }
        for r in 0..m {
            if r != pr {
                let f = t[r * width + enter];
                if f != 0.0 {
                    for col in 0..width {
                        t[r * width + col] -= f * t[pr * width + col];
                    }
                }
            }
        }
        let f = cost[enter];
        for col in 0..width {
            cost[col] -= f * t[pr * width + col];
        }
        basis[pr] = enter;
    }

    let infeasibility = -cost[rhs];
    if infeasibility > FEASIBLE_TOL {
        return Ok(Feasibility {
            feasible: false,
            certificate: None,
            infeasibility,
        });
    }
    let mut lambda = vec![0.0; n];
    for (r, &b) in basis.iter().enumerate() {
        if b < n {
            lambda[b] = t[r * width + rhs].max(0.0);
        }
    }
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|v| *v /= total);
    Ok(Feasibility {
        feasible: true,
        certificate: Some(lambda),
        infeasibility: infeasibility.max(0.0),
    })
}
