//! Layered tensor-train surrogates of concentrated probability densities.
//!
//! A target density is pulled back through an approximate transport map,
//! the resulting near-reference density is split into hyperspherical
//! shells, and each shell is fitted by a functional tensor train in polar
//! coordinates. Normalization, moments and marginals then follow from
//! one-dimensional integrals.

pub mod basis;
pub mod bayes;
pub mod coords;
pub mod density;
pub mod error;
pub mod polynomial;
pub mod quadrature;
pub mod sampling;
pub mod transport;
pub mod tt;

pub use bayes::{
    darcy_solve, log_posterior, posterior_density, rwm_mcmc, synthesize_observations, DarcyLiteForward,
    ForwardModel, GaussianNoiseModel, LinearForward, MCMCConfig, MCMCResult,
};
pub use coords::{LayerPartition, PolarChart};
pub use density::{BuildReport, DensityFile, DensityMetadata, DensityOptions, LayeredDensity, TailSpec};
pub use error::{Error, Result};
pub use transport::{
    laplace_affine, perturbed_prior, AffineMap, LaplaceFit, LaplaceOptions, LogDensity, QuadraticMap, TransportMap,
};
pub use tt::{fit_als, ExtendedTT, FitDiagnostics, FitOptions};
