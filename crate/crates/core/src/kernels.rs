//! Positive-definite kernel functions and batched kernel matrices.
//!
//! Two kernels are provided, both parameterized by a width `mu > 0`:
//!
//! * Gaussian radial basis function, `K(x, y) = exp(-||x - y||^2 / mu)`;
//! * exponential dot product, `K(x, y) = exp(x . y / mu)`, whose native
//!   space contains every polynomial.
//!
//! `mu` divides the squared distance (respectively the dot product)
//! directly; it is not the `2 sigma^2` convention.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent argument accepted before `exp` overflows an `f64`.
pub(crate) const MAX_EXP_ARG: f64 = 700.0;

/// Kernel families supported by the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    GaussianRbf,
    ExponentialDotProduct,
}

/// A positive-definite kernel together with its width parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    kind: KernelKind,
    mu: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel width mu must be positive and finite, got {mu}"
            )));
        }
        Ok(Self { kind, mu })
    }

    /// Gaussian RBF with width `mu`.
    pub fn gaussian(mu: f64) -> Result<Self> {
        Self::new(KernelKind::GaussianRbf, mu)
    }

    /// Exponential dot-product kernel with width `mu`; `mu = 1` is the
    /// Bargmann-Fock reproducing kernel.
    pub fn exponential_dot(mu: f64) -> Result<Self> {
        Self::new(KernelKind::ExponentialDotProduct, mu)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Re-checks the constructor invariant, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.kind, self.mu).map(|_| ())
    }

    /// Evaluates `K(x, y)`. Symmetric in its arguments.
    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "kernel arguments have mismatched dimensions {} and {}",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::InvalidInput(
                "kernel arguments must have dimension at least 1".into(),
            ));
        }
        self.eval_unchecked(x, y)
    }

    /// `eval` without the per-call dimension checks; callers validate once
    /// per batch.
    pub(crate) fn eval_unchecked(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        match self.kind {
            KernelKind::GaussianRbf => {
                let mut dist_sq = 0.0;
                for (a, b) in x.iter().zip(y.iter()) {
                    let d = a - b;
                    dist_sq += d * d;
                }
                Ok((-dist_sq / self.mu).exp())
            }
            KernelKind::ExponentialDotProduct => {
                let mut dot = 0.0;
                for (a, b) in x.iter().zip(y.iter()) {
                    dot += a * b;
                }
                let arg = dot / self.mu;
                if arg > MAX_EXP_ARG {
                    return Err(Error::NumericRange(format!(
                        "exponential dot-product argument {arg:.3e} exceeds {MAX_EXP_ARG}; \
                         kernel value would overflow"
                    )));
                }
                Ok(arg.exp())
            }
        }
    }

    /// Kernel matrix between two point sets, one point per row.
    ///
    /// Entry `(p, q)` is `K(xs[p], ys[q])`. An empty point set yields the
    /// corresponding zero-extent matrix.
    pub fn eval_matrix(&self, xs: ArrayView2<f64>, ys: ArrayView2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != ys.ncols() {
            return Err(Error::InvalidInput(format!(
                "point sets have mismatched dimensions {} and {}",
                xs.ncols(),
                ys.ncols()
            )));
        }
        if xs.ncols() == 0 {
            return Err(Error::InvalidInput(
                "points must have dimension at least 1".into(),
            ));
        }
        let mut out = Array2::zeros((xs.nrows(), ys.nrows()));
        for (p, x) in xs.rows().into_iter().enumerate() {
            for (q, y) in ys.rows().into_iter().enumerate() {
                out[[p, q]] = self.eval_unchecked(x, y)?;
            }
        }
        Ok(out)
    }
}
