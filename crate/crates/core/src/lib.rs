//! Nonparametric density reconstruction from kernel mean embeddings and
//! conditional density estimation with closed-form operators.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`kernels`] evaluates positive-semidefinite kernels and Gram matrices
//!    and selects bandwidths by the median heuristic.
//! 2. [`linalg`] provides Tikhonov-regularized symmetric solves, a
//!    Kronecker-structured solver for full grids, and a finite-sample error
//!    bound calculator.
//! 3. [`reconstruct`] recovers a density from an empirical mean embedding by
//!    solving the regularized inverse problem against a reference measure.
//! 4. [`cdo`] composes density reconstruction with the conditional mean
//!    operator: fit from paired samples, predict conditional densities for
//!    point or distributional inputs, normalize, sample, and compute
//!    closed-form predictive moments.
//!
//! All randomized operations take explicit seeds and are deterministic for a
//! fixed seed on one machine.

pub mod cdo;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod reconstruct;
pub mod sample;

pub use cdo::{fit, fit_grouped, AlphaChoice, FittedCdo, Moments, PairedData};
pub use error::{Error, Result};
pub use kernels::{eval_kernel, gram, median_heuristic, DistanceMetric, GramMatrix, KernelSpec};
pub use linalg::{
    kron_solve, pivoted_cholesky, prop2_bound, solve_regularized, solve_regularized_vec,
    symmetric_eigen, tikhonov_schedule, BoundReport, KroneckerGram, PivotedCholesky,
    SymmetricFactorization,
};
pub use reconstruct::{
    embed, l1_error, reconstruct_density, tikhonov_exact, uniform_reference, DensityEstimate,
    EmbeddingCoefficients, ReconstructionMethod, ReferenceMeasure, ReferenceMode,
};
pub use sample::SampleSet;
