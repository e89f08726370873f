//! Numerical calculus on a discretized two-component Wiener space.
//!
//! The crate realizes, on a uniform time grid, the objects of anticipating
//! stochastic analysis for a pair of correlated Wiener processes:
//!
//! * a Gaussian model `S = [[I, V], [V^T, I]]` for the joint noise, with
//!   whitening, conditional projectors and conditional-expectation regression
//!   ([`gaussian`]);
//! * Hermite-chaos expansions stored as compressed symmetric tensors, with
//!   the degree-lowering derivative, the Skorokhod-type divergence, Wick and
//!   pointwise products, and second quantization ([`chaos`], [`sym`]);
//! * Gaussian strong random operators and non-semimartingale integrators,
//!   including a fractional Brownian kernel with an exact causal
//!   factorization of the power-law covariance ([`gsro`], [`fbm`]);
//! * Cameron-Martin and anticipating drift densities with their
//!   Carleman-Fredholm determinant and quasi-nilpotence certificates
//!   ([`girsanov`]);
//! * the correlated-noise smoothing problem: an importance-sampling Bayes
//!   smoother, a Wick-transport SPDE for the conditional field, and backward
//!   Kolmogorov residual checks ([`smoothing`]).

pub mod chaos;
pub mod error;
pub mod fbm;
pub mod gaussian;
pub mod girsanov;
pub mod grid;
pub mod gsro;
pub mod linalg;
pub mod rng;
pub mod smoothing;
pub mod sym;

pub use chaos::{Basis, ChaosVector, ExpandOutput, TruncationReport, VectorChaos};
pub use error::{Error, Result};
pub use fbm::FbmKernel;
pub use gaussian::{ConditionalLaw, CovModel, CrossCovarianceSpec, NoiseSample};
pub use girsanov::{DensityEval, DriftSpec, ScalarFn};
pub use grid::TimeGrid;
pub use gsro::{BoundReport, Gsro, IntegratorProcess, Tensor3};
pub use smoothing::{
    ConsistencyReport, KolmogorovProblem, KolmogorovReport, PathBundle, RGrid, SmootherOutput,
    SmoothingModel, SpdeField, SpdeOptions, TestFunction, ThirdTerm,
};
