//! Covariance function estimation for sparsely observed functional data by
//! spectrally regularized empirical risk minimization in a tensor-product
//! Sobolev RKHS.
//!
//! The pipeline is: smooth the mean ([`meanfit`]), build the finite
//! dimensional problem ([`covest::build_design`]), fit the coefficient matrix
//! with accelerated proximal gradient ([`covest::apg_fit`]), pick the penalty
//! level by cross-validation, and post-process with the closed-form L²
//! eigen-decomposition ([`eigen`]). [`simulate`] reproduces the benchmark
//! experiments.

// Links the system OpenBLAS that provides BLAS and LAPACK symbols.
extern crate openblas_src as _;

pub mod covest;
pub mod data;
pub mod eigen;
pub mod error;
pub mod kernel;
pub mod meanfit;
pub mod quadrature;
pub mod simulate;
pub mod spectral;

pub use data::{Curve, FunctionalDataset};
pub use error::{Error, Result};
pub use kernel::KernelSpec;
pub use quadrature::QuadratureRule;
pub use spectral::Penalty;
