//! Generative and encoding models.
//!
//! Three model families share one training-facing interface:
//!
//! - [`LinearHvae`]: a two-layer linear-Gaussian hierarchical VAE with
//!   closed-form prior, marginal, and posterior moments. Every analytic
//!   quantity the evaluation layer needs (exact evidence, posterior
//!   covariance, condition numbers) comes from here.
//! - [`HvaeStack`]: the generic two-layer top-down stack with MLP maps, a
//!   residual-parameterized encoder, and per-layer closed-form KL terms.
//! - [`MlpVae`]: a small single-layer-latent MLP VAE for nonlinear smoke
//!   tests.
//!
//! Encoders are residual-parameterized: each layer's variational sample is
//! `mu_prior + sigma_prior .* (mu_res + sigma_res .* eps)`, which makes the
//! per-layer KL to the prior conditional a function of the residual
//! read-outs alone.

mod checkpoint;
mod common;
mod linear;
mod mlp;
mod stack;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData};
pub use common::{
    bernoulli_loglik_node, gaussian_loglik_node, layer_kl_closed_form, tensor_as_matrix,
    ElboParts, LatentModel, Likelihood, PriorSample,
};
pub use linear::LinearHvae;
pub use mlp::MlpVae;
pub use stack::HvaeStack;

use crate::targets::Potential;
use crate::Result;

/// Builds the posterior potential `U(z|x) = -log p(x|z) - log p(z)` for a
/// model and one observation.
pub fn build_posterior_potential<'a>(
    model: &'a dyn LatentModel,
    x: &[f64],
) -> Result<Box<dyn Potential + 'a>> {
    model.posterior_potential(x)
}

/// A model of any supported family, as configured by the harness.
pub enum AnyModel {
    Linear(LinearHvae),
    Stack(HvaeStack),
    Mlp(MlpVae),
}

impl AnyModel {
    pub fn as_latent(&self) -> &dyn LatentModel {
        match self {
            AnyModel::Linear(m) => m,
            AnyModel::Stack(m) => m,
            AnyModel::Mlp(m) => m,
        }
    }

    pub fn as_latent_mut(&mut self) -> &mut dyn LatentModel {
        match self {
            AnyModel::Linear(m) => m,
            AnyModel::Stack(m) => m,
            AnyModel::Mlp(m) => m,
        }
    }

    /// Analytic linear model, when this is one.
    pub fn as_linear(&self) -> Option<&LinearHvae> {
        match self {
            AnyModel::Linear(m) => Some(m),
            _ => None,
        }
    }
}
