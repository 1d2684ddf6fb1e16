//! Variational Bayes for count-response semiparametric regression.
//!
//! The crate fits Poisson and Negative Binomial generalized additive mixed
//! models with non-conjugate variational message passing (a Gaussian
//! q-density for the regression coefficients, conjugate q-densities for the
//! variance components). It provides:
//!
//! - [`distributions`]: the handful of families the models use, including
//!   the Poisson–Gamma and nested Inverse-Gamma auxiliary constructions.
//! - [`spline`]: O'Sullivan penalized spline bases in mixed-model form.
//! - [`quadrature`]: the log-domain integral behind the `q(κ)` moments.
//! - [`model`]: design assembly and hyperparameters.
//! - [`vmp`]: the batch fitting algorithm, lower bound and prediction.
//! - [`stream`]: one-observation-at-a-time Poisson updating.
//! - [`mcmc`]: a Metropolis-within-Gibbs reference sampler and the
//!   density-overlap accuracy score.
//! - [`simulation`] and [`benchmark`]: data generators and replicate studies.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod distributions;
mod error;
pub mod gof;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod quadrature;
pub mod simulation;
pub mod spline;
pub mod stream;
pub mod vmp;

pub use error::{Error, Result};
pub use model::{DesignBlocks, Family, Hyperparameters, ModelSpec, RawRecord, RowEncoder};
pub use vmp::{FitConfig, FitResult, GaussianQ, Init, NegBinAux, VarianceQ};

/// Generator used wherever reproducible randomness is required.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Build a [`SeededRng`] from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
