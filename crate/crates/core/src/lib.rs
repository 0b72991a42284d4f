//! Two-step sieve maximum likelihood estimation for linear quantile
//! regression with one endogenous regressor and additive measurement error
//! in the outcome, together with the baseline estimators, simulation design,
//! and bootstrap inference used to benchmark it.
//!
//! The second-stage model is the convolution likelihood
//! `f(y | x, v) = ∫ f_eps(y - x'beta(u)) c(u | v) du`, with `beta(·)`
//! approximated in a B-spline sieve, a finite Gaussian mixture for the
//! measurement error, and a Gaussian copula linking the latent rank to the
//! generated control variable.

pub mod basis;
pub mod data;
pub mod dgp;
pub mod distributions;
pub mod error;
pub mod first_stage;
pub mod likelihood;
pub mod optimize;
pub mod baselines;
pub mod linalg;

pub use error::{Error, Result};
