//! Occupation kernels and the matrices assembled from them.
//!
//! The occupation kernel of a trajectory gamma on [0, T] is the RKHS element
//! representing `g -> integral_0^T g(gamma(t)) dt`; pointwise it evaluates as
//! `Gamma(x) = integral_0^T K(x, gamma(t)) dt`. Pairwise inner products of
//! occupation kernels form the Gram matrix
//!
//! `G[i, j] = integral integral K(gamma_i(tau), gamma_j(t)) dt dtau`,
//!
//! realized as the tensor contraction `w_i' * K(S_i, S_j) * w_j` of the
//! per-trajectory quadrature weights with the kernel matrix of their sample
//! blocks. The interaction matrix pairs each occupation kernel with the
//! endpoint kernel difference produced by the (scaled) generator's adjoint:
//!
//! `I_a[i, j] = w_i' * (K(S_i, a*gamma_j(T_j)) - K(S_i, a*gamma_j(0)))`,
//!
//! with `a = 1` the unscaled case. Assembly parallelizes over rows; every
//! entry uses a fixed summation order, so results do not depend on the
//! worker count.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::quadrature::{QuadratureRule, QuadratureWeights};
use crate::trajectory::Trajectory;

/// A trajectory paired with the quadrature weights for its sample grid.
#[derive(Debug, Clone)]
pub struct WeightedTrajectory {
    traj: Trajectory,
    weights: QuadratureWeights,
}

impl WeightedTrajectory {
    pub fn new(traj: Trajectory, rule: QuadratureRule) -> Result<Self> {
        let weights = QuadratureWeights::for_times(traj.times(), rule)?;
        Ok(Self { traj, weights })
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn weights(&self) -> &QuadratureWeights {
        &self.weights
    }

    /// Evaluates the occupation kernel at `x`:
    /// `integral_0^T K(x, gamma(t)) dt ~ sum_p w_p K(x, gamma(t_p))`.
    pub fn occupation_eval(
        &self,
        kernel: &KernelSpec,
        x: ndarray::ArrayView1<f64>,
    ) -> Result<f64> {
        if x.len() != self.traj.dim() {
            return Err(Error::InvalidInput(format!(
                "evaluation point has dimension {} but the trajectory has {}",
                x.len(),
                self.traj.dim()
            )));
        }
        let mut acc = 0.0;
        for (w, sample) in self
            .weights
            .weights()
            .iter()
            .zip(self.traj.states().rows())
        {
            acc += w * kernel.eval_unchecked(x, sample)?;
        }
        Ok(acc)
    }
}

fn common_dim(trajs: &[WeightedTrajectory]) -> Result<usize> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one trajectory is required".into()))?;
    let dim = first.trajectory().dim();
    for (i, wt) in trajs.iter().enumerate() {
        if wt.trajectory().dim() != dim {
            return Err(Error::InvalidInput(format!(
                "trajectory {i} has dimension {} but trajectory 0 has {dim}",
                wt.trajectory().dim()
            )));
        }
    }
    Ok(dim)
}

/// Gram matrix of occupation kernels, `G[i, j] = w_i' K(S_i, S_j) w_j`,
/// symmetrized as `(G + G') / 2` to cancel summation-order noise.
pub fn gram_matrix(trajs: &[WeightedTrajectory], kernel: &KernelSpec) -> Result<Array2<f64>> {
    common_dim(trajs)?;
    let m = trajs.len();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let wi = &trajs[i];
            (0..m)
                .map(|j| {
                    let wj = &trajs[j];
                    let kmat = kernel.eval_matrix(
                        wi.trajectory().states(),
                        wj.trajectory().states(),
                    )?;
                    let kw = kmat.dot(&wj.weights().weights());
                    Ok(wi.weights().weights().dot(&kw))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = Array2::zeros((m, m));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            g[[i, j]] = v;
        }
    }
    Ok((&g + &g.t()) * 0.5)
}

/// Interaction matrix at endpoint scaling `a` in (0, 1]:
/// `I_a[i, j] = Gamma_i(a * gamma_j(T_j)) - Gamma_i(a * gamma_j(0))`.
///
/// Scaling touches only the endpoint arguments, never the occupation
/// kernels themselves; `a = 1` reproduces the unscaled matrix bit-exactly.
pub fn interaction_matrix(
    trajs: &[WeightedTrajectory],
    kernel: &KernelSpec,
    a: f64,
) -> Result<Array2<f64>> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "scaling parameter a must lie in (0, 1], got {a}"
        )));
    }
    let dim = common_dim(trajs)?;
    let m = trajs.len();
    let mut ends = Array2::zeros((m, dim));
    let mut starts = Array2::zeros((m, dim));
    for (j, wt) in trajs.iter().enumerate() {
        for (k, (e, s)) in wt
            .trajectory()
            .end_state()
            .iter()
            .zip(wt.trajectory().start_state().iter())
            .enumerate()
        {
            ends[[j, k]] = a * e;
            starts[[j, k]] = a * s;
        }
    }
    let rows: Vec<Array1<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let wi = &trajs[i];
            let k_end = kernel.eval_matrix(wi.trajectory().states(), ends.view())?;
            let k_start = kernel.eval_matrix(wi.trajectory().states(), starts.view())?;
            let diff = k_end - k_start;
            Ok(wi.weights().weights().dot(&diff))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((m, m));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// Per-trajectory state integrals: row i is
/// `integral_0^{T_i} gamma_i(t)' dt ~ w_i' S_i`.
pub fn state_integrals(trajs: &[WeightedTrajectory]) -> Result<Array2<f64>> {
    let dim = common_dim(trajs)?;
    let mut out = Array2::zeros((trajs.len(), dim));
    for (i, wt) in trajs.iter().enumerate() {
        let row = wt.weights().weights().dot(&wt.trajectory().states());
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// The data-side matrices of the decomposition, assembled once per run.
#[derive(Debug, Clone)]
pub struct GramData {
    gram: Array2<f64>,
    interaction: Array2<f64>,
    scaling: f64,
    state_integrals: Array2<f64>,
    kernel: KernelSpec,
}

impl GramData {
    /// Assembles the Gram matrix, the interaction matrix at scaling `a`,
    /// and the state integrals for one trajectory collection.
    pub fn assemble(
        trajs: &[WeightedTrajectory],
        kernel: &KernelSpec,
        a: f64,
    ) -> Result<Self> {
        let gram = gram_matrix(trajs, kernel)?;
        let interaction = interaction_matrix(trajs, kernel, a)?;
        let state_integrals = state_integrals(trajs)?;
        Ok(Self {
            gram,
            interaction,
            scaling: a,
            state_integrals,
            kernel: *kernel,
        })
    }

    pub fn gram(&self) -> ArrayView2<'_, f64> {
        self.gram.view()
    }

    pub fn interaction(&self) -> ArrayView2<'_, f64> {
        self.interaction.view()
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn state_integrals(&self) -> ArrayView2<'_, f64> {
        self.state_integrals.view()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn num_trajectories(&self) -> usize {
        self.gram.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use ndarray_linalg::{Eigh, UPLO};

    fn constant_traj(c: &[f64], duration: f64, samples: usize) -> WeightedTrajectory {
        let times: Vec<f64> = (0..samples)
            .map(|i| duration * i as f64 / (samples - 1) as f64)
            .collect();
        let states = Array2::from_shape_fn((samples, c.len()), |(_, j)| c[j]);
        WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap()
    }

    /// gamma(t) = (t) on [0, 1] with the given sample count.
    fn line_traj(samples: usize) -> WeightedTrajectory {
        let times: Vec<f64> = (0..samples)
            .map(|i| i as f64 / (samples - 1) as f64)
            .collect();
        let states = Array2::from_shape_fn((samples, 1), |(i, _)| times[i]);
        WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap()
    }

    #[test]
    fn occupation_eval_of_constant_trajectory() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let wt = constant_traj(&[0.0, 0.0], 2.0, 5);
        // integrand is constant: Gamma(x) = T * K(x, c)
        let x = array![0.0, 0.0];
        assert_abs_diff_eq!(
            wt.occupation_eval(&kernel, x.view()).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        let y = array![1.0, -1.0];
        let expected = 2.0 * kernel.eval(y.view(), array![0.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(
            wt.occupation_eval(&kernel, y.view()).unwrap(),
            expected,
            epsilon = 1e-14
        );
    }

    #[test]
    fn occupation_eval_matches_analytic_integral() {
        // gamma(t) = (t, 0) on [0, 1]: Gamma((0,0)) = integral exp(-t^2) dt
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let samples = 1001;
        let times: Vec<f64> = (0..samples).map(|i| i as f64 / 1000.0).collect();
        let states = Array2::from_shape_fn((samples, 2), |(i, j)| {
            if j == 0 {
                times[i]
            } else {
                0.0
            }
        });
        let wt = WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap();
        let v = wt
            .occupation_eval(&kernel, array![0.0, 0.0].view())
            .unwrap();
        assert_abs_diff_eq!(v, 0.7468241328124270, epsilon = 1e-6);
    }

    #[test]
    fn occupation_eval_rejects_dimension_mismatch() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let wt = constant_traj(&[0.0, 0.0], 1.0, 3);
        assert!(wt.occupation_eval(&kernel, array![1.0].view()).is_err());
    }

    #[test]
    fn gram_of_constant_trajectories() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let trajs = vec![
            constant_traj(&[0.0, 0.0], 2.0, 5),
            constant_traj(&[1.0, 0.0], 3.0, 7),
        ];
        let g = gram_matrix(&trajs, &kernel).unwrap();
        // G[i, j] = T_i T_j K(c_i, c_j)
        assert_abs_diff_eq!(g[[0, 0]], 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(g[[1, 1]], 9.0, epsilon = 1e-13);
        let k01 = kernel
            .eval(array![0.0, 0.0].view(), array![1.0, 0.0].view())
            .unwrap();
        assert_abs_diff_eq!(g[[0, 1]], 6.0 * k01, epsilon = 1e-13);
        assert_eq!(g[[0, 1]], g[[1, 0]]);
    }

    #[test]
    fn gram_single_trajectory_is_positive() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let g = gram_matrix(&[line_traj(101)], &kernel).unwrap();
        assert_eq!(g.shape(), &[1, 1]);
        assert!(g[[0, 0]] > 0.0);
    }

    #[test]
    fn gram_matches_high_precision_double_integral() {
        // gamma(t) = t on [0, 1], Gaussian mu = 1:
        // integral integral exp(-(s-t)^2) ds dt = 0.86152770679629637...
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let g = gram_matrix(&[line_traj(2001)], &kernel).unwrap();
        assert_abs_diff_eq!(g[[0, 0]], 0.8615277067962964, epsilon = 1e-6);
    }

    #[test]
    fn gram_is_exactly_symmetric_and_near_psd() {
        let kernel = KernelSpec::gaussian(0.5).unwrap();
        let trajs: Vec<WeightedTrajectory> = (0..4)
            .map(|k| {
                let times: Vec<f64> = (0..60).map(|i| i as f64 * 0.02).collect();
                let states = Array2::from_shape_fn((60, 2), |(i, j)| {
                    let t = times[i] + k as f64;
                    if j == 0 {
                        (t * 1.3).sin()
                    } else {
                        (t * 0.7).cos()
                    }
                });
                WeightedTrajectory::new(
                    Trajectory::new(times, states).unwrap(),
                    QuadratureRule::Auto,
                )
                .unwrap()
            })
            .collect();
        let g = gram_matrix(&trajs, &kernel).unwrap();
        assert_eq!(g, g.t());
        let eigs = g.eigh(UPLO::Lower).unwrap().0;
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let m = g.nrows() as f64;
        assert!(min >= -1e-8 * g.diag().sum() / m, "min eigenvalue {min}");
    }

    #[test]
    fn gram_entries_match_nested_occupation_evaluation() {
        // same tensor contraction in the other evaluation order
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let trajs = vec![line_traj(41), constant_traj(&[0.5], 1.0, 33)];
        let g = gram_matrix(&trajs, &kernel).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let wi = &trajs[i];
                let mut acc = 0.0;
                for (w, sample) in wi
                    .weights()
                    .weights()
                    .iter()
                    .zip(wi.trajectory().states().rows())
                {
                    acc += w * trajs[j].occupation_eval(&kernel, sample).unwrap();
                }
                assert_abs_diff_eq!(g[[i, j]], acc, epsilon = 1e-10 * (1.0 + acc.abs()));
            }
        }
    }

    #[test]
    fn interaction_of_closed_or_constant_trajectories_vanishes() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let trajs = vec![
            constant_traj(&[0.3, -0.2], 1.0, 9),
            constant_traj(&[-1.0, 0.4], 2.0, 9),
        ];
        let i1 = interaction_matrix(&trajs, &kernel, 1.0).unwrap();
        assert!(i1.iter().all(|&v| v == 0.0));

        // a closed loop zeroes its own column only
        let times: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let mut states = Array2::from_shape_fn((101, 2), |(i, j)| {
            let angle = 2.0 * std::f64::consts::PI * times[i];
            if j == 0 {
                angle.cos()
            } else {
                angle.sin()
            }
        });
        for j in 0..2 {
            states[[100, j]] = states[[0, j]];
        }
        let loop_traj = WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap();
        let times: Vec<f64> = (0..51).map(|i| i as f64 * 0.02).collect();
        let states = Array2::from_shape_fn((51, 2), |(i, j)| {
            if j == 0 {
                times[i]
            } else {
                times[i] * times[i]
            }
        });
        let open_traj = WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap();
        let both = vec![loop_traj, open_traj];
        let mat = interaction_matrix(&both, &kernel, 1.0).unwrap();
        assert_eq!(mat[[0, 0]], 0.0);
        assert_eq!(mat[[1, 0]], 0.0);
        assert!(mat[[0, 1]].abs() > 1e-6);
    }

    #[test]
    fn interaction_line_cancels_by_symmetry() {
        // I[0,0] = int exp(-(t-1)^2) - exp(-t^2) dt = 0 on [0, 1]
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let mat = interaction_matrix(&[line_traj(1001)], &kernel, 1.0).unwrap();
        assert!(mat[[0, 0]].abs() < 1e-10, "got {}", mat[[0, 0]]);
    }

    #[test]
    fn interaction_rejects_bad_scaling() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let trajs = [line_traj(11)];
        assert!(interaction_matrix(&trajs, &kernel, 0.0).is_err());
        assert!(interaction_matrix(&trajs, &kernel, 1.5).is_err());
        assert!(interaction_matrix(&trajs, &kernel, -0.5).is_err());
    }

    #[test]
    fn unit_scaling_is_bit_exact() {
        let kernel = KernelSpec::gaussian(0.7).unwrap();
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.025).collect();
        let states = Array2::from_shape_fn((40, 2), |(i, j)| {
            if j == 0 {
                (times[i] * 2.0).sin()
            } else {
                times[i]
            }
        });
        let trajs = vec![WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap()];
        let scaled = interaction_matrix(&trajs, &kernel, 1.0).unwrap();
        // replica of the contraction without any endpoint scaling
        let wt = &trajs[0];
        let ends = wt.trajectory().end_state().insert_axis(ndarray::Axis(0)).to_owned();
        let starts = wt
            .trajectory()
            .start_state()
            .insert_axis(ndarray::Axis(0))
            .to_owned();
        let k_end = kernel.eval_matrix(wt.trajectory().states(), ends.view()).unwrap();
        let k_start = kernel
            .eval_matrix(wt.trajectory().states(), starts.view())
            .unwrap();
        let unscaled = wt.weights().weights().dot(&(k_end - k_start));
        assert_eq!(scaled[[0, 0]], unscaled[0]);
    }

    #[test]
    fn scaling_converges_to_unscaled() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let times: Vec<f64> = (0..80).map(|i| i as f64 * 0.0125).collect();
        let states = Array2::from_shape_fn((80, 2), |(i, j)| {
            if j == 0 {
                times[i].cos()
            } else {
                -times[i].sin()
            }
        });
        let trajs = vec![WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap()];
        let base = interaction_matrix(&trajs, &kernel, 1.0).unwrap();
        let max_diff = |a: f64| -> f64 {
            let mat = interaction_matrix(&trajs, &kernel, a).unwrap();
            (&mat - &base)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
        };
        let (d90, d99, d999) = (max_diff(0.9), max_diff(0.99), max_diff(0.999));
        assert!(d999 < d99 && d99 < d90, "{d999} {d99} {d90}");
        // near-linear in (1 - a): a tenth of the gap, a tenth of the deviation
        assert!(d99 / d90 < 0.15, "ratio {}", d99 / d90);
    }

    #[test]
    fn state_integrals_examples() {
        let trajs = vec![constant_traj(&[2.0, -1.0], 3.0, 9)];
        let s = state_integrals(&trajs).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], 6.0, epsilon = 1e-13);
        assert_abs_diff_eq!(s[[0, 1]], -3.0, epsilon = 1e-13);

        // Simpson is exact for the linear integrand t on [0, 1]
        let s = state_integrals(&[line_traj(101)]).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], 0.5, epsilon = 1e-15);

        // full oscillator period integrates to zero
        let times: Vec<f64> = (0..2001)
            .map(|i| 2.0 * std::f64::consts::PI * i as f64 / 2000.0)
            .collect();
        let states = Array2::from_shape_fn((2001, 2), |(i, j)| {
            if j == 0 {
                times[i].cos()
            } else {
                -times[i].sin()
            }
        });
        let wt = WeightedTrajectory::new(
            Trajectory::new(times, states).unwrap(),
            QuadratureRule::Auto,
        )
        .unwrap();
        let s = state_integrals(&[wt]).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s[[0, 1]], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let trajs = vec![line_traj(11), constant_traj(&[0.0, 0.0], 1.0, 5)];
        assert!(gram_matrix(&trajs, &kernel).is_err());
        assert!(state_integrals(&trajs).is_err());
    }

    #[test]
    fn assemble_bundles_all_three() {
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let trajs = vec![line_traj(21), line_traj(41)];
        let data = GramData::assemble(&trajs, &kernel, 0.95).unwrap();
        assert_eq!(data.num_trajectories(), 2);
        assert_eq!(data.scaling(), 0.95);
        assert_eq!(data.gram(), gram_matrix(&trajs, &kernel).unwrap());
        assert_eq!(
            data.interaction(),
            interaction_matrix(&trajs, &kernel, 0.95).unwrap()
        );
        assert_eq!(data.state_integrals(), state_integrals(&trajs).unwrap());
    }
}
