//! Composite quadrature weights over a trajectory's sample times.
//!
//! Every inner product downstream is a weighted sum of kernel samples, so
//! integration reduces to one weight vector per trajectory. Composite
//! Simpson is used on uniform grids (with a trapezoid patch on the last
//! interval when the interval count is odd) and the trapezoid rule
//! everywhere else; all weights are non-negative and sum to the duration.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative spacing deviation below which a grid counts as uniform.
const UNIFORM_TOL: f64 = 1e-9;

/// Rule requested by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    /// Simpson when the grid is uniform, trapezoid otherwise.
    Auto,
    Simpson,
    Trapezoid,
}

/// Rule actually applied once the grid has been inspected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliedRule {
    Simpson,
    Trapezoid,
    /// Composite Simpson on the first N-1 intervals, trapezoid on the last;
    /// used when a uniform grid has an odd interval count.
    SimpsonWithTrapezoidTail,
}

/// Integration weights aligned with one trajectory's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureWeights {
    weights: Array1<f64>,
    rule_used: AppliedRule,
}

impl QuadratureWeights {
    /// Builds weights for a strictly increasing time grid.
    pub fn for_times(times: &[f64], rule: QuadratureRule) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "quadrature needs at least 2 time points, got {}",
                times.len()
            )));
        }
        for (i, pair) in times.windows(2).enumerate() {
            if !(pair[1] > pair[0]) {
                return Err(Error::InvalidInput(format!(
                    "times must be strictly increasing; t[{}] = {} then t[{}] = {}",
                    i,
                    pair[0],
                    i + 1,
                    pair[1]
                )));
            }
        }

        let intervals = times.len() - 1;
        let mean_gap = (times[intervals] - times[0]) / intervals as f64;
        let (worst_dev, worst_idx) = times
            .windows(2)
            .enumerate()
            .map(|(i, pair)| (((pair[1] - pair[0]) - mean_gap).abs() / mean_gap, i))
            .fold((0.0f64, 0usize), |acc, cur| if cur.0 > acc.0 { cur } else { acc });
        let uniform = worst_dev < UNIFORM_TOL;

        match rule {
            QuadratureRule::Trapezoid => Ok(Self::trapezoid(times)),
            QuadratureRule::Simpson => {
                if !uniform {
                    return Err(Error::InvalidInput(format!(
                        "Simpson requires uniform spacing; interval {} (t = {}..{}) deviates \
                         from the mean spacing by {:.3e} relative",
                        worst_idx,
                        times[worst_idx],
                        times[worst_idx + 1],
                        worst_dev
                    )));
                }
                Ok(Self::simpson_family(times, mean_gap))
            }
            QuadratureRule::Auto => {
                if uniform {
                    Ok(Self::simpson_family(times, mean_gap))
                } else {
                    Ok(Self::trapezoid(times))
                }
            }
        }
    }

    fn trapezoid(times: &[f64]) -> Self {
        let n = times.len();
        let mut w = Array1::zeros(n);
        w[0] = (times[1] - times[0]) / 2.0;
        w[n - 1] = (times[n - 1] - times[n - 2]) / 2.0;
        for i in 1..n - 1 {
            w[i] = (times[i + 1] - times[i - 1]) / 2.0;
        }
        Self {
            weights: w,
            rule_used: AppliedRule::Trapezoid,
        }
    }

    /// Composite Simpson on a uniform grid, patching an odd interval count
    /// with a trapezoid on the final interval.
    fn simpson_family(times: &[f64], gap: f64) -> Self {
        let intervals = times.len() - 1;
        let mut w = Array1::zeros(times.len());
        let body = if intervals.is_multiple_of(2) { intervals } else { intervals - 1 };
        if body > 0 {
            w[0] += gap / 3.0;
            w[body] += gap / 3.0;
            for i in 1..body {
                w[i] += if i % 2 == 1 { 4.0 * gap / 3.0 } else { 2.0 * gap / 3.0 };
            }
        }
        let rule_used = if body == intervals {
            AppliedRule::Simpson
        } else {
            let tail = (times[intervals] - times[intervals - 1]) / 2.0;
            w[intervals - 1] += tail;
            w[intervals] += tail;
            AppliedRule::SimpsonWithTrapezoidTail
        };
        Self {
            weights: w,
            rule_used,
        }
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn rule_used(&self) -> AppliedRule {
        self.rule_used
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integrates sampled values of `g` along the grid: `sum_p w_p g_p`.
    pub fn integrate(&self, samples: ArrayView1<f64>) -> Result<f64> {
        if samples.len() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "integrand has {} samples but the weights cover {}",
                samples.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.dot(&samples))
    }
}
