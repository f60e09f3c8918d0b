//! Quantitative evaluation: importance-sampling estimates of the
//! log-evidence, condition-number diagnostics for adapted preconditioners,
//! and the true-vs-estimated evidence gap on analytic models.

use std::path::Path;

use serde::Serialize;

use crate::kernels::{mh_step, KernelParams};
use crate::models::{LatentModel, LinearHvae};
use crate::numerics::{
    condition_number, gaussian_logpdf, sample_standard_normal, DenseMatrix,
    LowerTriangularFactor, RngStream,
};
use crate::{Error, Result};

/// Where the importance-sampling proposal gets its mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalMode {
    /// The encoder's mean path at `x`.
    EncoderMean,
    /// Run `steps` burn-in kernel steps from the encoder mean and average
    /// the last `max(1, steps/2)` states.
    ChainMean { steps: usize },
}

/// Importance-sampling configuration: sample count `S`, covariance scale
/// `tau >= 1`, and the proposal-mean mode.
#[derive(Debug, Clone)]
pub struct ISConfig {
    pub samples: usize,
    pub tau: f64,
    pub proposal: ProposalMode,
}

impl Default for ISConfig {
    fn default() -> Self {
        ISConfig {
            samples: 10_000,
            tau: 1.5,
            proposal: ProposalMode::EncoderMean,
        }
    }
}

/// Log-sum-exp stabilized mean of log-weights: `log (1/n) sum exp(w)`.
fn log_mean_exp(log_w: &[f64]) -> f64 {
    let max = log_w.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = log_w.iter().map(|w| (w - max).exp()).sum();
    max + (sum / log_w.len() as f64).ln()
}

/// Core estimator with an arbitrary Gaussian proposal given by its mean
/// and covariance factor:
///
/// `log p_hat(x) = log (1/S) sum_s exp(log p(x|z_s) + log p(z_s) - log r(z_s))`
pub fn is_loglik_with_gaussian_proposal(
    model: &dyn LatentModel,
    x: &[f64],
    mean: &[f64],
    cov_factor: &LowerTriangularFactor,
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let d = model.latent_dim();
    if mean.len() != d || cov_factor.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mean.len(),
        });
    }
    let mut log_w = Vec::with_capacity(samples);
    for _ in 0..samples {
        let eps = sample_standard_normal(d, rng);
        let z: Vec<f64> = cov_factor
            .matvec(&eps)
            .iter()
            .zip(mean)
            .map(|(a, b)| a + b)
            .collect();
        let log_r = gaussian_logpdf(&z, mean, cov_factor)?;
        log_w.push(model.log_joint(x, &z) - log_r);
    }
    Ok(log_mean_exp(&log_w))
}

/// Importance-sampling log-evidence with the diagonal encoder proposal
/// `N(mean, tau * diag(scales^2))`; the mean follows `cfg.proposal`.
/// For the chain-mean mode, `kernel` supplies the burn-in kernel.
pub fn importance_sampling_loglik(
    model: &dyn LatentModel,
    x: &[f64],
    kernel: Option<&KernelParams>,
    cfg: &ISConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let (enc_mean, scales) = model.encoder_moments(x);
    if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::DegenerateProposal(
            "encoder scale not strictly positive".into(),
        ));
    }
    if cfg.samples == 0 {
        return Err(Error::DegenerateProposal("zero importance samples".into()));
    }

    let mean = match cfg.proposal {
        ProposalMode::EncoderMean => enc_mean,
        ProposalMode::ChainMean { steps } => {
            let kernel = kernel.ok_or_else(|| {
                Error::DegenerateProposal("chain-mean proposal requires a kernel".into())
            })?;
            let potential = model.posterior_potential(x)?;
            let mut z = enc_mean;
            let keep = (steps / 2).max(1);
            let mut tail: Vec<Vec<f64>> = Vec::with_capacity(keep);
            for step in 0..steps.max(1) {
                z = mh_step(&z, potential.as_ref(), kernel, rng)?.next_state;
                if step + keep >= steps.max(1) {
                    tail.push(z.clone());
                }
            }
            let mut mean = vec![0.0; z.len()];
            for t in &tail {
                for (m, v) in mean.iter_mut().zip(t) {
                    *m += v / tail.len() as f64;
                }
            }
            mean
        }
    };

    let sd: Vec<f64> = scales.iter().map(|s| cfg.tau.sqrt() * s).collect();
    let factor = LowerTriangularFactor::from_parts(
        sd.len(),
        sd.iter().map(|s| s.ln()).collect(),
        vec![0.0; sd.len() * (sd.len() - 1) / 2],
    );
    is_loglik_with_gaussian_proposal(model, x, &mean, &factor, cfg.samples, rng)
}

/// Condition numbers of the posterior precision, raw and as transformed
/// by a preconditioner: `kappa(Sigma_{z|x}^{-1})` and
/// `kappa(C^T Sigma_{z|x}^{-1} C)` (absent without a `C`).
pub fn condition_diagnostics(
    model: &LinearHvae,
    c: Option<&DenseMatrix>,
) -> Result<(f64, Option<f64>)> {
    let prec = model.posterior_precision();
    let raw = condition_number(&prec)?;
    let transformed = match c {
        Some(c) => {
            let t = c.transpose().matmul(&prec.matmul(c)).symmetrized();
            Some(condition_number(&t)?)
        }
        None => None,
    };
    Ok((raw, transformed))
}

/// Mean true-minus-estimated log-evidence over a dataset (signed; the
/// headline metric is its absolute value).
pub fn loglik_gap(truth: &LinearHvae, estimate: &LinearHvae, data: &[Vec<f64>]) -> f64 {
    truth.mean_marginal_loglik(data) - estimate.mean_marginal_loglik(data)
}

/// The evaluation report written next to a run's metrics.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub kernel: String,
    pub adaptation: String,
    pub kappa_raw: Option<f64>,
    pub kappa_transformed: Option<f64>,
    pub gap_mean: Option<f64>,
    pub gap_abs: Option<f64>,
    pub is_loglik_mean: f64,
    pub is_samples: usize,
    pub tau: f64,
    pub seed: u64,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, body + "\n")?;
        Ok(())
    }
}
