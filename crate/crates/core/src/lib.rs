//! Continuous-time dynamic mode decomposition driven by occupation kernels.
//!
//! The pipeline turns sampled trajectories of an unknown dynamical system
//! into a spectral model of the flow without ever discretizing time:
//!
//! 1. [`trajectory`] ingests or synthesizes time-stamped state samples.
//! 2. [`quadrature`] turns each sample grid into integration weights.
//! 3. [`occupation`] assembles the Gram matrix of occupation kernels and the
//!    endpoint interaction matrix, the two ingredients of the finite-rank
//!    operator representation.
//! 4. [`decomposition`] solves the eigenproblem, normalizes eigenfunctions,
//!    computes modes, and evaluates the resulting continuous-time model:
//!    reconstruction `x(t) ~ sum_i xi_i phi_i(x(0)) exp(lambda_i t)` and a
//!    frequency spectrum read off the eigenvalues.
//!
//! Everything is deterministic: assemblies use fixed per-entry summation
//! orders, so identical inputs produce bit-identical outputs regardless of
//! worker count.

// Negated float comparisons are used for validation on purpose: unlike
// their inverted forms they reject NaN. Oracle constants are frozen at 17
// significant digits.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]

pub mod decomposition;
pub mod error;
pub mod kernels;
pub mod occupation;
pub mod quadrature;
pub mod trajectory;

pub use decomposition::{
    eigendecompose, finite_rank_representation, liouville_modes, projection_error,
    DecompositionModel, FileDigest, ModelFile, ModelProvenance, Prediction, Reconstruction,
    SpectrumEntry, TransposeVariant,
};
pub use error::{Error, Result};
pub use kernels::{KernelKind, KernelSpec};
pub use occupation::{
    gram_matrix, interaction_matrix, state_integrals, GramData, WeightedTrajectory,
};
pub use quadrature::{AppliedRule, QuadratureRule, QuadratureWeights};
pub use trajectory::{
    load_trajectories, segment, segment_with_stride, simulate, InputLayout, Trajectory,
    VectorFieldSpec,
};
