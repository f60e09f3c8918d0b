use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};
use crate::numerics::{DenseMatrix, RngStream, LN_2PI};
use crate::targets::{Potential, ThetaGrad};
use crate::Result;

/// Observation likelihood attached to a decoder head.
#[derive(Debug, Clone)]
pub enum Likelihood {
    /// Gaussian with fixed (non-trainable) per-coordinate log standard
    /// deviations; the decoder outputs the mean.
    Gaussian { log_sigma: Vec<f64> },
    /// Bernoulli; the decoder outputs logits.
    Bernoulli,
}

/// Handles into a single-sample pathwise ELBO graph.
pub struct ElboParts {
    /// Scalar node: `log p(x|z0) - sum_l KL_l`.
    pub elbo: NodeId,
    /// Scalar node: `log p(x|z0)`.
    pub recon: NodeId,
    /// Scalar node: total closed-form KL.
    pub kl: NodeId,
    /// The sampled latent (flattened across layers), as plain values.
    pub z0: Vec<f64>,
}

/// Latent draw from the prior with the deterministic top-down variables.
#[derive(Debug, Clone)]
pub struct PriorSample {
    /// Per-layer latents.
    pub z: Vec<Vec<f64>>,
    /// Per-layer deterministic variables.
    pub d: Vec<Vec<f64>>,
}

impl PriorSample {
    pub fn flattened(&self) -> Vec<f64> {
        self.z.concat()
    }
}

/// The uniform training-facing model interface.
pub trait LatentModel {
    fn data_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    /// Number of standard-normal draws one encoder sample consumes.
    fn noise_dim(&self) -> usize;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Builds the single-sample pathwise ELBO graph at fixed noise.
    fn elbo_graph(&self, tape: &mut Tape, x: &[f64], eps: &[f64]) -> Result<ElboParts>;

    /// Encoder mean path and per-coordinate conditional scales at `x`
    /// (noise set to zero), flattened across layers.
    fn encoder_moments(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>);

    /// `U(z|x) = -log p(x|z) - log p(z)` with value/gradient/HVP access
    /// and the generative-parameter gradient hook.
    fn posterior_potential(&self, x: &[f64]) -> Result<Box<dyn Potential + '_>>;

    /// `log p(x|z) + log p(z)`, fully normalized.
    fn log_joint(&self, x: &[f64], z: &[f64]) -> f64;

    /// Gradient of [`LatentModel::log_joint`] with respect to generative
    /// parameters at fixed `z`.
    fn theta_grad(&self, x: &[f64], z: &[f64]) -> ThetaGrad;

    /// Ancestral draw of latents and deterministic variables.
    fn prior_sample(&self, rng: &mut RngStream) -> PriorSample;

    /// Generative parameter names belonging to the prior over latents
    /// (frozen by the `freeze_prior_during_mcmc` option).
    fn prior_param_names(&self) -> Vec<String>;

    /// One-line metadata string for checkpoints.
    fn checkpoint_meta(&self) -> String;

    /// Concrete linear-Gaussian view, when the model is one; lets callers
    /// reach the analytic diagnostics without knowing the concrete type.
    fn as_linear(&self) -> Option<&super::linear::LinearHvae> {
        None
    }
}

/// Exact per-layer KL under the residual parameterization:
///
/// `KL = 1/2 sum_i [ sigma_i^2 + mu_i^2 - 1 - 2 log sigma_i ]`
///
/// where `(mu, sigma)` are the residual read-outs. The prior-side scale
/// cancels, so this depends on the read-outs alone.
pub fn layer_kl_closed_form(mu_res: &[f64], sigma_res: &[f64]) -> f64 {
    debug_assert_eq!(mu_res.len(), sigma_res.len());
    0.5 * mu_res
        .iter()
        .zip(sigma_res)
        .map(|(m, s)| s * s + m * m - 1.0 - 2.0 * s.ln())
        .sum::<f64>()
}

/// Same KL as a tape node, given the residual mean node and the
/// pre-exponential log-scale node (`sigma = exp(log_sigma)`).
pub fn layer_kl_node(
    tape: &mut Tape,
    mu_res: NodeId,
    log_sigma_res: NodeId,
) -> Result<NodeId> {
    let sigma = tape.exp(log_sigma_res);
    let s2 = tape.square(sigma);
    let m2 = tape.square(mu_res);
    let sum_sq = tape.add(s2, m2)?;
    let two_log = tape.scale(log_sigma_res, 2.0);
    let inner = tape.sub(sum_sq, two_log)?;
    let shifted = tape.add_const(inner, -1.0);
    let total = tape.sum(shifted);
    Ok(tape.scale(total, 0.5))
}

/// `log N(x; mean, diag(exp(log_sigma))^2)` as a tape node with `x` and
/// `log_sigma` fixed.
pub fn gaussian_loglik_node(
    tape: &mut Tape,
    x: &[f64],
    mean: NodeId,
    log_sigma: &[f64],
) -> Result<NodeId> {
    let d = x.len();
    let xc = tape.constant_vector(x);
    let inv_sigma: Vec<f64> = log_sigma.iter().map(|s| (-s).exp()).collect();
    let invc = tape.constant_vector(&inv_sigma);
    let diff = tape.sub(xc, mean)?;
    let scaled = tape.mul(diff, invc)?;
    let sq = tape.square(scaled);
    let quad = tape.sum(sq);
    let half = tape.scale(quad, -0.5);
    let norm: f64 = log_sigma.iter().sum::<f64>() + 0.5 * d as f64 * LN_2PI;
    Ok(tape.add_const(half, -norm))
}

/// Gaussian log-likelihood node with a trainable log-sigma node.
pub fn gaussian_loglik_node_trainable(
    tape: &mut Tape,
    x: &[f64],
    mean: NodeId,
    log_sigma: NodeId,
) -> Result<NodeId> {
    let d = x.len();
    let xc = tape.constant_vector(x);
    let neg_ls = tape.scale(log_sigma, -1.0);
    let inv_sigma = tape.exp(neg_ls);
    let diff = tape.sub(xc, mean)?;
    let scaled = tape.mul(diff, inv_sigma)?;
    let sq = tape.square(scaled);
    let quad = tape.sum(sq);
    let half = tape.scale(quad, -0.5);
    let ls_sum = tape.sum(log_sigma);
    let neg_ls_sum = tape.scale(ls_sum, -1.0);
    let partial = tape.add(half, neg_ls_sum)?;
    Ok(tape.add_const(partial, -0.5 * d as f64 * LN_2PI))
}

/// `sum_i [x_i logit_i - softplus(logit_i)]`, the Bernoulli log-likelihood
/// at logits.
pub fn bernoulli_loglik_node(tape: &mut Tape, x: &[f64], logits: NodeId) -> Result<NodeId> {
    let xc = tape.constant_vector(x);
    let linear = tape.dot(xc, logits)?;
    let sp = tape.softplus(logits);
    let sp_sum = tape.sum(sp);
    tape.sub(linear, sp_sum)
}

/// Plain-value Gaussian log-density with diagonal scales.
pub fn diag_gaussian_logpdf(x: &[f64], mean: &[f64], log_sigma: &[f64]) -> f64 {
    let d = x.len() as f64;
    let mut quad = 0.0;
    let mut norm = 0.0;
    for ((x, m), s) in x.iter().zip(mean).zip(log_sigma) {
        let w = (x - m) * (-s).exp();
        quad += w * w;
        norm += s;
    }
    -0.5 * quad - norm - 0.5 * d * LN_2PI
}

/// Plain-value Bernoulli log-likelihood at logits.
pub fn bernoulli_logpdf(x: &[f64], logits: &[f64]) -> f64 {
    x.iter()
        .zip(logits)
        .map(|(x, l)| x * l - (l.max(0.0) + (-l.abs()).exp().ln_1p()))
        .sum()
}

/// Reads a matrix-shaped parameter out of a store.
pub fn tensor_as_matrix(store: &ParamStore, name: &str) -> DenseMatrix {
    let t = store.value(name);
    match t.shape {
        crate::autodiff::Shape::Matrix(r, c) => {
            let mut m = DenseMatrix::zeros(r, c);
            m.data_mut().copy_from_slice(&t.data);
            m
        }
        crate::autodiff::Shape::Vector(_) => panic!("parameter {name} is not a matrix"),
    }
}

/// Random `N(0, 1/sqrt(fan_in))` weight initialization.
pub fn init_weight(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    let std = 1.0 / (cols as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| std * rng.standard_normal()).collect(),
    )
}
