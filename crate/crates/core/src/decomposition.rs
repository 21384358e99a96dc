//! Finite-rank operator representation, eigen-decomposition, modes, and the
//! resulting continuous-time model.
//!
//! Projecting the generator onto the span of the occupation kernels yields
//! the M x M matrix `R = G^{-1} I_a'`. Its eigenpairs `(lambda_i, v_i)` are
//! normalized against the Gram matrix, `N_i = sqrt(v_i^H G v_i)`, so each
//! column of the stored eigenvector matrix V carries `v_i / N_i`. The modes
//! expand the full state observable `x -> x` in the eigenfunction basis,
//!
//! `xi = ((V' G V)^{-1} V' S)'` with S the matrix of state integrals,
//!
//! and the model evaluates as
//! `x(t) ~ sum_i xi_i phi_i(x(0)) exp(lambda_i t)` where
//! `phi_i(x0) = sum_j V[j, i] Gamma_j(x0)`.
//!
//! Eigenvalues are continuous-time: frequencies read off as Im(lambda)/2pi
//! without any log-of-discrete-map step.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Eig, Factorize, FactorizeC, Solve, SolveC, UPLO};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, MAX_EXP_ARG};
use crate::occupation::{gram_matrix, GramData, WeightedTrajectory};
use crate::quadrature::{AppliedRule, QuadratureRule};
use crate::trajectory::{InputLayout, Trajectory};

/// Relative threshold under which an eigenvector counts as G-orthogonal to
/// the data span (measured against sqrt(trace G)).
pub const DEGENERATE_EIGENVECTOR_THRESHOLD: f64 = 1e-12;

/// A squared Gram norm must exceed this multiple of its evaluation noise
/// floor (machine epsilon times the summed term magnitudes) to count as
/// resolved; below it the normalization would divide by rounding noise.
pub const GRAM_NORM_RESOLUTION: f64 = 64.0;

/// Which transpose enters the mode equation `((V' G V)^{-1} V' S)'`.
///
/// The printed equation uses the plain transpose even though V is complex;
/// the conjugate variant is available since the derivation's inner products
/// suggest it. On training data the reconstructed state is real either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransposeVariant {
    Plain,
    Conjugate,
}

/// Regularization actually added to the diagonal: `eps * trace(G) / M`.
pub fn effective_regularization(gram: ArrayView2<f64>, eps: f64) -> f64 {
    eps * gram.diag().sum() / gram.nrows() as f64
}

/// Solves `(G + eps_hat I) X = interaction'` through a symmetric-definite
/// factorization; the inverse is never formed explicitly.
pub fn finite_rank_representation(
    gram: ArrayView2<f64>,
    interaction: ArrayView2<f64>,
    eps: f64,
) -> Result<Array2<f64>> {
    let m = gram.nrows();
    if m == 0 || gram.ncols() != m {
        return Err(Error::InvalidInput(format!(
            "Gram matrix must be square and non-empty, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if interaction.shape() != gram.shape() {
        return Err(Error::InvalidInput(format!(
            "interaction matrix is {:?} but the Gram matrix is {:?}",
            interaction.shape(),
            gram.shape()
        )));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!(
            "regularization eps must be non-negative and finite, got {eps}"
        )));
    }
    let eps_hat = effective_regularization(gram, eps);
    let mut g_hat = gram.to_owned();
    for i in 0..m {
        g_hat[[i, i]] += eps_hat;
    }
    let factor = g_hat
        .factorizec(UPLO::Lower)
        .map_err(|e| Error::SingularGram(format!("Cholesky factorization failed ({e})")))?;
    let mut x = Array2::zeros((m, m));
    for j in 0..m {
        // column j of interaction' is row j of interaction
        let col = factor
            .solvec(&interaction.row(j).to_owned())
            .map_err(|e| Error::SingularGram(format!("triangular solve failed ({e})")))?;
        x.column_mut(j).assign(&col);
    }
    Ok(x)
}

/// Error-free product: returns (p, e) with a * b = p + e exactly.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, f64::mul_add(a, b, -p))
}

/// Neumaier-compensated accumulator.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// `u^H G u` for symmetric real G (a real number), evaluated with
/// error-free products and compensated summation, together with the sum of
/// the term magnitudes. Eigenvectors nearly orthogonal to the data span
/// cancel catastrophically in a plain double-precision sum; the magnitude
/// sum bounds the evaluation's noise floor.
pub(crate) fn gram_quadratic_form(
    gram: ArrayView2<f64>,
    u: ArrayView1<Complex64>,
) -> (f64, f64) {
    let mut acc = CompensatedSum::default();
    let mut magnitude = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let g = gram[[i, j]];
            // Re(conj(u_i) u_j) = re_i re_j + im_i im_j
            for (a, b) in [(u[i].re, u[j].re), (u[i].im, u[j].im)] {
                let (p1, e1) = two_prod(a, b);
                let (p2, e2) = two_prod(p1, g);
                acc.add(p2);
                acc.add(f64::mul_add(e1, g, e2));
                magnitude += p2.abs();
            }
        }
    }
    (acc.value(), magnitude)
}

/// Orders eigenvalue indices by descending |lambda| while keeping conjugate
/// partners adjacent with the positive imaginary branch first; ties break by
/// descending imaginary part, then original index.
fn conjugate_pair_order(vals: ArrayView1<Complex64>) -> Vec<usize> {
    let m = vals.len();
    let scale = vals.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-8 * scale;
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut i = 0;
    while i < m {
        let lam = vals[i];
        if lam.im != 0.0 && i + 1 < m {
            let next = vals[i + 1];
            if (next.re - lam.re).abs() <= tol && (next.im + lam.im).abs() <= tol {
                if lam.im >= next.im {
                    blocks.push(vec![i, i + 1]);
                } else {
                    blocks.push(vec![i + 1, i]);
                }
                i += 2;
                continue;
            }
        }
        blocks.push(vec![i]);
        i += 1;
    }
    blocks.sort_by(|a, b| {
        let ka = vals[a[0]];
        let kb = vals[b[0]];
        kb.norm()
            .total_cmp(&ka.norm())
            .then(kb.im.total_cmp(&ka.im))
            .then(a[0].cmp(&b[0]))
    });
    blocks.into_iter().flatten().collect()
}

/// Eigen-decomposes the finite-rank representation and G-normalizes the
/// eigenvectors: returned column i holds `v_i / sqrt(v_i^H G v_i)`.
///
/// Eigenvectors whose Gram norm falls below
/// `DEGENERATE_EIGENVECTOR_THRESHOLD * sqrt(trace G)` are numerically
/// orthogonal to the data span and carry no information; those pairs are
/// discarded, so the returned V has one column per retained pair (at most
/// M). Conjugate partners share the same Gram norm and are kept or dropped
/// together. An error is raised only when no pair survives.
pub fn eigendecompose(
    gram: ArrayView2<f64>,
    interaction: ArrayView2<f64>,
    eps: f64,
) -> Result<(Vec<Complex64>, Array2<Complex64>)> {
    let rep = finite_rank_representation(gram, interaction, eps)?;
    let (vals, vecs) = rep.eig()?;
    let order = conjugate_pair_order(vals.view());

    let m = vals.len();
    let norm_floor = DEGENERATE_EIGENVECTOR_THRESHOLD * gram.diag().sum().sqrt();
    let mut eigenvalues = Vec::with_capacity(m);
    let mut columns: Vec<Array1<Complex64>> = Vec::with_capacity(m);
    for &idx in &order {
        let u = vecs.column(idx);
        let (q, magnitude) = gram_quadratic_form(gram, u);
        let norm = q.max(0.0).sqrt();
        // drop pairs below the degeneracy floor, and pairs whose Gram norm does
        // not rise above its own double-precision evaluation noise: dividing
        // by such a norm would scale the eigenvector by pure rounding noise
        if norm <= norm_floor || q <= GRAM_NORM_RESOLUTION * f64::EPSILON * magnitude {
            continue;
        }
        let mut col = u.mapv(|z| z / norm);
        // one refinement pass against the compensated form
        let (q2, _) = gram_quadratic_form(gram, col.view());
        if q2 > 0.0 && (q2 - 1.0).abs() > 1e-12 {
            let rescale = 1.0 / q2.sqrt();
            col.mapv_inplace(|z| z * rescale);
        }
        eigenvalues.push(vals[idx]);
        columns.push(col);
    }
    if eigenvalues.is_empty() {
        return Err(Error::DegenerateEigenvector(format!(
            "every eigenvector has Gram norm below {norm_floor:.3e}; \
             the data span does not support the decomposition"
        )));
    }
    let mut v = Array2::zeros((m, eigenvalues.len()));
    for (slot, col) in columns.iter().enumerate() {
        v.column_mut(slot).assign(col);
    }
    Ok((eigenvalues, v))
}

/// Computes the modes `xi = ((V' G V)^{-1} V' S)'`, returned as an
/// n x M' matrix with one mode per retained eigenpair (V is M x M').
/// `variant` selects the plain or conjugate transpose of V.
pub fn liouville_modes(
    v: ArrayView2<Complex64>,
    gram: ArrayView2<f64>,
    state_integrals: ArrayView2<f64>,
    eps: f64,
    variant: TransposeVariant,
) -> Result<Array2<Complex64>> {
    let m = gram.nrows();
    if v.nrows() != m || state_integrals.nrows() != m {
        return Err(Error::InvalidInput(format!(
            "inconsistent shapes: V {:?}, G {:?}, state integrals {:?}",
            v.shape(),
            gram.shape(),
            state_integrals.shape()
        )));
    }
    let retained = v.ncols();
    let vt: Array2<Complex64> = match variant {
        TransposeVariant::Plain => v.t().to_owned(),
        TransposeVariant::Conjugate => v.t().mapv(|z| z.conj()),
    };
    let gram_c = gram.mapv(|x| Complex64::new(x, 0.0));
    let state_c = state_integrals.mapv(|x| Complex64::new(x, 0.0));
    let mut w = vt.dot(&gram_c).dot(&v);
    let eps_hat = effective_regularization(gram, eps);
    for i in 0..retained {
        w[[i, i]] += Complex64::new(eps_hat, 0.0);
    }
    let rhs = vt.dot(&state_c);
    let factor = w.factorize().map_err(|e| {
        Error::DegenerateEigenbasis(format!("V' G V could not be factorized ({e})"))
    })?;
    let n = state_integrals.ncols();
    let mut xi = Array2::zeros((n, retained));
    for j in 0..n {
        let col = factor.solve(&rhs.column(j).to_owned()).map_err(|e| {
            Error::DegenerateEigenbasis(format!("mode solve failed ({e})"))
        })?;
        for i in 0..retained {
            xi[[j, i]] = col[i];
        }
    }
    Ok(xi)
}

/// RKHS projection error of the kernel section at `probe` onto the span of
/// the occupation kernels: `K(y, y) - k' (G + eps_hat I)^{-1} k` with
/// `k_i = Gamma_i(y)`. Non-increasing as trajectories are added.
pub fn projection_error(
    trajs: &[WeightedTrajectory],
    kernel: &KernelSpec,
    probe: ArrayView1<f64>,
    eps: f64,
) -> Result<f64> {
    let gram = gram_matrix(trajs, kernel)?;
    let mut k = Array1::zeros(trajs.len());
    for (i, wt) in trajs.iter().enumerate() {
        k[i] = wt.occupation_eval(kernel, probe)?;
    }
    let eps_hat = effective_regularization(gram.view(), eps);
    let mut g_hat = gram;
    for i in 0..g_hat.nrows() {
        g_hat[[i, i]] += eps_hat;
    }
    let coeffs = g_hat
        .solvec(&k)
        .map_err(|e| Error::SingularGram(format!("projection solve failed ({e})")))?;
    Ok(kernel.eval(probe, probe)? - k.dot(&coeffs))
}

/// One state prediction together with the discarded imaginary residual.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub state: Array1<f64>,
    /// 2-norm of the imaginary part of the modal sum; a diagnostic for how
    /// well conjugate contributions cancelled.
    pub imag_residual: f64,
}

/// A reconstructed path over a requested time grid.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// The reconstruction as a trajectory (times re-based to start at 0).
    pub trajectory: Trajectory,
    /// The grid exactly as requested.
    pub requested_times: Vec<f64>,
    /// Imaginary residual per requested time.
    pub imag_residuals: Vec<f64>,
    /// True when the grid reaches beyond the longest training duration.
    pub extrapolated: bool,
}

/// One spectral line: `Im(lambda) / 2 pi` Hz against its modal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEntry {
    pub frequency_hz: f64,
    pub magnitude: f64,
}

/// A fitted decomposition: eigenvalues, G-normalized eigenvectors, modes,
/// and the trajectories needed to evaluate eigenfunctions at new points.
#[derive(Debug, Clone)]
pub struct DecompositionModel {
    eigenvalues: Vec<Complex64>,
    eigenvectors: Array2<Complex64>,
    modes: Array2<Complex64>,
    scaling: f64,
    eps: f64,
    eps_hat: f64,
    kernel: KernelSpec,
    trajectories: Vec<WeightedTrajectory>,
    transpose: TransposeVariant,
}

impl DecompositionModel {
    /// Runs the full decomposition: assemble G and I_a, eigen-decompose
    /// `G^{-1} I_a'`, and solve for the modes.
    pub fn fit(
        trajectories: Vec<WeightedTrajectory>,
        kernel: KernelSpec,
        scaling: f64,
        eps: f64,
        transpose: TransposeVariant,
    ) -> Result<Self> {
        let data = GramData::assemble(&trajectories, &kernel, scaling)?;
        Self::from_gram_data(trajectories, &data, eps, transpose)
    }

    /// [`DecompositionModel::fit`] from pre-assembled matrices.
    pub fn from_gram_data(
        trajectories: Vec<WeightedTrajectory>,
        data: &GramData,
        eps: f64,
        transpose: TransposeVariant,
    ) -> Result<Self> {
        if trajectories.len() != data.num_trajectories() {
            return Err(Error::InvalidInput(format!(
                "{} trajectories but the Gram data covers {}",
                trajectories.len(),
                data.num_trajectories()
            )));
        }
        let (eigenvalues, eigenvectors) = eigendecompose(data.gram(), data.interaction(), eps)?;
        let mut modes = liouville_modes(
            eigenvectors.view(),
            data.gram(),
            data.state_integrals(),
            eps,
            transpose,
        )?;
        // real training data makes the exact modes conjugate-symmetric
        // across eigenvalue pairs; restore the symmetry the complex solve
        // loses to rounding
        symmetrize_conjugate_modes(&eigenvalues, eigenvectors.view(), &mut modes);
        Ok(Self {
            eigenvalues,
            eigenvectors,
            modes,
            scaling: data.scaling(),
            eps,
            eps_hat: effective_regularization(data.gram(), eps),
            kernel: *data.kernel(),
            trajectories,
            transpose,
        })
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// G-normalized eigenvector matrix V, one eigenfunction per column.
    pub fn eigenvectors(&self) -> ArrayView2<'_, Complex64> {
        self.eigenvectors.view()
    }

    /// Modes as an n x M matrix, one mode per column.
    pub fn modes(&self) -> ArrayView2<'_, Complex64> {
        self.modes.view()
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// The diagonal shift `eps * trace(G) / M` used in the solves.
    pub fn eps_hat(&self) -> f64 {
        self.eps_hat
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn trajectories(&self) -> &[WeightedTrajectory] {
        &self.trajectories
    }

    pub fn transpose(&self) -> TransposeVariant {
        self.transpose
    }

    /// Number of retained eigenpairs (at most the number of trajectories;
    /// pairs numerically orthogonal to the data span are discarded).
    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of training trajectories M.
    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn state_dim(&self) -> usize {
        self.modes.nrows()
    }

    /// Longest training-trajectory duration; predictions past it are
    /// extrapolations.
    pub fn max_duration(&self) -> f64 {
        self.trajectories
            .iter()
            .map(|wt| wt.trajectory().duration())
            .fold(0.0, f64::max)
    }

    /// Evaluates every eigenfunction at `x0`:
    /// `phi_i(x0) = sum_j V[j, i] Gamma_j(x0)` (the 1/N_i normalization is
    /// already folded into V).
    pub fn eigenfunctions_at(&self, x0: ArrayView1<f64>) -> Result<Array1<Complex64>> {
        eval_eigenfunctions(
            self.eigenvectors.view(),
            &self.trajectories,
            &self.kernel,
            x0,
        )
    }

    /// Evaluates the model at time `t >= 0` from the initial condition `x0`:
    /// real part of `sum_i xi_i phi_i(x0) exp(lambda_i t)`.
    pub fn predict(&self, x0: ArrayView1<f64>, t: f64) -> Result<Prediction> {
        let phi = self.eigenfunctions_at(x0)?;
        self.predict_from_coefficients(&phi, t)
    }

    fn predict_from_coefficients(&self, phi: &Array1<Complex64>, t: f64) -> Result<Prediction> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!(
                "prediction time must be non-negative and finite, got {t}"
            )));
        }
        for lam in &self.eigenvalues {
            if lam.re * t > MAX_EXP_ARG {
                return Err(Error::NumericRange(format!(
                    "exp(Re(lambda) t) overflows for lambda = {lam}, t = {t}"
                )));
            }
        }
        let n = self.state_dim();
        let mut sum = Array1::<Complex64>::zeros(n);
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            let weight = phi[i] * (lam * t).exp();
            for j in 0..n {
                sum[j] += self.modes[[j, i]] * weight;
            }
        }
        let state = sum.mapv(|z| z.re);
        let imag_residual = sum.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
        Ok(Prediction {
            state,
            imag_residual,
        })
    }

    /// Predicts over a whole grid (at least two strictly increasing times).
    pub fn reconstruct(&self, x0: ArrayView1<f64>, times: &[f64]) -> Result<Reconstruction> {
        if times.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "reconstruction needs at least 2 time points, got {}",
                times.len()
            )));
        }
        let phi = self.eigenfunctions_at(x0)?;
        let n = self.state_dim();
        let mut states = Array2::zeros((times.len(), n));
        let mut residuals = Vec::with_capacity(times.len());
        for (row, &t) in times.iter().enumerate() {
            let pred = self.predict_from_coefficients(&phi, t)?;
            states.row_mut(row).assign(&pred.state);
            residuals.push(pred.imag_residual);
        }
        let max_duration = self.max_duration();
        Ok(Reconstruction {
            trajectory: Trajectory::new(times.to_vec(), states)?,
            requested_times: times.to_vec(),
            imag_residuals: residuals,
            extrapolated: times.iter().any(|&t| t > max_duration),
        })
    }

    /// Frequency spectrum at `x0`: one entry per eigenvalue with
    /// `Im(lambda) >= 0`, frequency `Im(lambda) / 2 pi` Hz, magnitude
    /// `||xi_i|| |phi_i(x0)|` (doubled for strictly complex pairs to count
    /// the conjugate partner), sorted by frequency.
    pub fn spectrum(&self, x0: ArrayView1<f64>) -> Result<Vec<SpectrumEntry>> {
        let phi = self.eigenfunctions_at(x0)?;
        let mut out = Vec::new();
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            if lam.im < 0.0 {
                continue;
            }
            let mode_norm = self
                .modes
                .column(i)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            let mut magnitude = mode_norm * phi[i].norm();
            if lam.im > 0.0 {
                magnitude *= 2.0;
            }
            out.push(SpectrumEntry {
                frequency_hz: lam.im / (2.0 * std::f64::consts::PI),
                magnitude,
            });
        }
        out.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
        Ok(out)
    }

    /// Re-orders eigenpairs by descending `||xi_i|| |phi_i(x0)|` (stable, so
    /// near-tied conjugate partners keep their relative order).
    pub fn reorder_by_energy(&mut self, x0: ArrayView1<f64>) -> Result<()> {
        let phi = self.eigenfunctions_at(x0)?;
        let m = self.num_modes();
        let energies: Vec<f64> = (0..m)
            .map(|i| {
                let mode_norm = self
                    .modes
                    .column(i)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                mode_norm * phi[i].norm()
            })
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]));
        self.apply_order(&order);
        Ok(())
    }

    fn apply_order(&mut self, order: &[usize]) {
        let m = self.num_modes();
        let rows = self.eigenvectors.nrows();
        let n = self.state_dim();
        let mut vals = Vec::with_capacity(m);
        let mut vecs = Array2::zeros((rows, m));
        let mut modes = Array2::zeros((n, m));
        for (slot, &idx) in order.iter().enumerate() {
            vals.push(self.eigenvalues[idx]);
            vecs.column_mut(slot).assign(&self.eigenvectors.column(idx));
            modes.column_mut(slot).assign(&self.modes.column(idx));
        }
        self.eigenvalues = vals;
        self.eigenvectors = vecs;
        self.modes = modes;
    }
}

/// Restores the symmetry the exact modes carry when the training data is
/// real: adjacent conjugate eigenpairs get exactly conjugate modes,
/// `xi_i <- (xi_i + conj(xi_partner)) / 2`, and real eigenvalues with real
/// eigenvectors get real modes.
///
/// A pair counts as conjugate only when both the eigenvalues and the
/// eigenvector columns are (near-exact) conjugates; near-degenerate
/// eigenvalues with unrelated eigenvectors must not be mixed.
fn symmetrize_conjugate_modes(
    eigenvalues: &[Complex64],
    v: ArrayView2<Complex64>,
    modes: &mut Array2<Complex64>,
) {
    let mut i = 0;
    while i < eigenvalues.len() {
        let a = eigenvalues[i];
        let paired = i + 1 < eigenvalues.len() && {
            let b = eigenvalues[i + 1];
            a.im > 0.0
                && (a - b.conj()).norm() <= 1e-8 * (1.0 + a.norm())
                && v
                    .column(i)
                    .iter()
                    .zip(v.column(i + 1).iter())
                    .all(|(p, q)| (p - q.conj()).norm() <= 1e-12 * (1.0 + p.norm()))
        };
        if paired {
            for r in 0..modes.nrows() {
                let avg = (modes[[r, i]] + modes[[r, i + 1]].conj()).scale(0.5);
                modes[[r, i]] = avg;
                modes[[r, i + 1]] = avg.conj();
            }
            i += 2;
        } else {
            if a.im == 0.0 && v.column(i).iter().all(|p| p.im == 0.0) {
                for r in 0..modes.nrows() {
                    modes[[r, i]].im = 0.0;
                }
            }
            i += 1;
        }
    }
}

fn eval_eigenfunctions(
    v: ArrayView2<Complex64>,
    trajs: &[WeightedTrajectory],
    kernel: &KernelSpec,
    x0: ArrayView1<f64>,
) -> Result<Array1<Complex64>> {
    if trajs.len() != v.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} trajectories but V has {} rows",
            trajs.len(),
            v.nrows()
        )));
    }
    let mut occ = Array1::zeros(trajs.len());
    for (j, wt) in trajs.iter().enumerate() {
        occ[j] = wt.occupation_eval(kernel, x0)?;
    }
    let m = v.ncols();
    let mut phi = Array1::zeros(m);
    for i in 0..m {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..v.nrows() {
            acc += v[[j, i]] * occ[j];
        }
        phi[i] = acc;
    }
    Ok(phi)
}

/// Digest of one input data file, for staleness checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Serialized form of a [`DecompositionModel`].
///
/// Trajectory data is referenced by digest rather than embedded: evaluating
/// eigenfunctions at new points requires the original trajectory files, so
/// the model records how they were ingested (layout, segmentation,
/// quadrature rule) plus a digest per file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub scaling: f64,
    pub eps: f64,
    pub eps_hat: f64,
    pub transpose: TransposeVariant,
    pub state_dim: usize,
    pub num_trajectories: usize,
    /// Retained eigenpairs (at most `num_trajectories`).
    pub num_modes: usize,
    pub eigenvalues_re: Vec<f64>,
    pub eigenvalues_im: Vec<f64>,
    /// Row-major, `num_trajectories` x `num_modes`.
    pub eigenvectors_re: Vec<f64>,
    pub eigenvectors_im: Vec<f64>,
    /// Row-major, `state_dim` x `num_modes`.
    pub modes_re: Vec<f64>,
    pub modes_im: Vec<f64>,
    pub quadrature: QuadratureRule,
    /// Rule actually applied per trajectory, in order.
    pub trajectory_rules: Vec<AppliedRule>,
    pub segment_len: Option<usize>,
    pub segment_stride: Option<usize>,
    pub input_layout: InputLayout,
    pub input_path: String,
    pub input_files: Vec<FileDigest>,
}

/// Ingestion provenance recorded alongside a serialized model.
#[derive(Debug, Clone)]
pub struct ModelProvenance {
    pub quadrature: QuadratureRule,
    pub segment_len: Option<usize>,
    pub segment_stride: Option<usize>,
    pub input_layout: InputLayout,
    pub input_path: String,
    pub input_files: Vec<FileDigest>,
}

impl ModelFile {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn from_model(model: &DecompositionModel, provenance: ModelProvenance) -> Self {
        let split_c = |it: &mut dyn Iterator<Item = Complex64>| -> (Vec<f64>, Vec<f64>) {
            let mut re = Vec::new();
            let mut im = Vec::new();
            for z in it {
                re.push(z.re);
                im.push(z.im);
            }
            (re, im)
        };
        let (eigenvalues_re, eigenvalues_im) =
            split_c(&mut model.eigenvalues().iter().copied());
        let (eigenvectors_re, eigenvectors_im) =
            split_c(&mut model.eigenvectors().rows().into_iter().flatten().copied());
        let (modes_re, modes_im) = split_c(&mut model.modes().rows().into_iter().flatten().copied());
        Self {
            format_version: Self::FORMAT_VERSION,
            kernel: *model.kernel(),
            scaling: model.scaling(),
            eps: model.eps(),
            eps_hat: model.eps_hat(),
            transpose: model.transpose(),
            state_dim: model.state_dim(),
            num_trajectories: model.num_trajectories(),
            num_modes: model.num_modes(),
            eigenvalues_re,
            eigenvalues_im,
            eigenvectors_re,
            eigenvectors_im,
            modes_re,
            modes_im,
            quadrature: provenance.quadrature,
            trajectory_rules: model
                .trajectories()
                .iter()
                .map(|wt| wt.weights().rule_used())
                .collect(),
            segment_len: provenance.segment_len,
            segment_stride: provenance.segment_stride,
            input_layout: provenance.input_layout,
            input_path: provenance.input_path,
            input_files: provenance.input_files,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        file.validate()?;
        Ok(file)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != Self::FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        self.kernel.validate()?;
        if !(self.scaling > 0.0 && self.scaling <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "model scaling {} outside (0, 1]",
                self.scaling
            )));
        }
        let m = self.num_trajectories;
        let r = self.num_modes;
        let n = self.state_dim;
        let lens_ok = r <= m
            && self.eigenvalues_re.len() == r
            && self.eigenvalues_im.len() == r
            && self.eigenvectors_re.len() == m * r
            && self.eigenvectors_im.len() == m * r
            && self.modes_re.len() == n * r
            && self.modes_im.len() == n * r
            && self.trajectory_rules.len() == m;
        if !lens_ok {
            return Err(Error::InvalidInput(
                "model arrays do not match the declared dimensions".into(),
            ));
        }
        Ok(())
    }

    /// Rebuilds the in-memory model against re-loaded trajectories. The
    /// trajectories must match the recorded count, dimension, and applied
    /// quadrature rules; callers are expected to digest-check the files
    /// first.
    pub fn instantiate(&self, trajectories: Vec<WeightedTrajectory>) -> Result<DecompositionModel> {
        if trajectories.len() != self.num_trajectories {
            return Err(Error::StaleModel(format!(
                "model was fitted on {} trajectories but the data yields {}",
                self.num_trajectories,
                trajectories.len()
            )));
        }
        for (i, (wt, rule)) in trajectories
            .iter()
            .zip(self.trajectory_rules.iter())
            .enumerate()
        {
            if wt.trajectory().dim() != self.state_dim {
                return Err(Error::StaleModel(format!(
                    "trajectory {i} has dimension {} but the model expects {}",
                    wt.trajectory().dim(),
                    self.state_dim
                )));
            }
            if wt.weights().rule_used() != *rule {
                return Err(Error::StaleModel(format!(
                    "trajectory {i} resolved to {:?} but the model recorded {rule:?}",
                    wt.weights().rule_used()
                )));
            }
        }
        let m = self.num_trajectories;
        let r = self.num_modes;
        let n = self.state_dim;
        let eigenvalues: Vec<Complex64> = self
            .eigenvalues_re
            .iter()
            .zip(&self.eigenvalues_im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        let eigenvectors = Array2::from_shape_fn((m, r), |(i, j)| {
            Complex64::new(
                self.eigenvectors_re[i * r + j],
                self.eigenvectors_im[i * r + j],
            )
        });
        let modes = Array2::from_shape_fn((n, r), |(i, j)| {
            Complex64::new(self.modes_re[i * r + j], self.modes_im[i * r + j])
        });
        Ok(DecompositionModel {
            eigenvalues,
            eigenvectors,
            modes,
            scaling: self.scaling,
            eps: self.eps,
            eps_hat: self.eps_hat,
            kernel: self.kernel,
            trajectories,
            transpose: self.transpose,
        })
    }
}
