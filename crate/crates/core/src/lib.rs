//! Variational autoencoder training with adaptive short-run MCMC chains.
//!
//! The library couples a standard ELBO-trained encoder with a short
//! Metropolis–Hastings chain (MALA or HMC) whose step size and
//! preconditioner are adapted online by gradient ascent on a
//! speed-measure objective: expected log-acceptance plus an
//! entropy bonus weighted by a coefficient `beta` that is itself
//! steered toward a target acceptance rate.
//!
//! Crate layout:
//! - [`numerics`]: dense linear algebra, Gaussian densities, seedable RNG streams
//! - [`autodiff`]: a minimal reverse-mode tape over dense tensors
//! - [`targets`]: the potential abstraction `U(z|x) = -log p(x|z) - log p(z)`
//! - [`kernels`]: MALA/HMC kernels, proposal entropies, adaptation gradients
//! - [`models`]: linear-Gaussian hierarchical VAE with closed-form moments,
//!   a generic two-layer top-down stack, and a small MLP VAE
//! - [`training`]: ELBO pretraining and the joint per-step update of
//!   (encoder, kernel, decoder, beta)
//! - [`evaluation`]: importance-sampling log-likelihood, condition-number
//!   diagnostics, and true-vs-estimated log-likelihood gaps

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod models;
pub mod numerics;
pub mod targets;
pub mod training;

pub use error::{Error, Result};
