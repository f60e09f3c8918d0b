//! Training loops: ELBO pretraining followed by joint per-step updates of
//! the encoder (pathwise ELBO gradient), the proposal parameters
//! (speed-measure gradient), the decoder (gradient of the log joint at
//! the chain's final state, which is detached), and the entropy weight
//! (multiplicative acceptance controller).
//!
//! One training step on a mini-batch:
//! 1. sample `z0 ~ q0(.|x)` by reparameterization and accumulate the
//!    encoder gradient of the single-sample ELBO (closed-form KL term);
//! 2. run `K` Metropolis-Hastings steps from `z0`, accumulating the
//!    per-step proposal gradient of `log alpha - beta log r` and the
//!    acceptance count;
//! 3. take the generative gradient of `log p(x|z_K) + log p(z_K)` with
//!    `z_K` treated as data;
//! 4. apply the four updates with their own learning rates; `beta` moves
//!    multiplicatively toward the target acceptance rate using the
//!    batch-pooled acceptance fraction.
//!
//! Gradients are averaged over the batch; the `K` per-step proposal
//! contributions are summed within a chain. Sums run in fixed
//! chain-index order so reruns are bit-identical.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::autodiff::Tape;
use crate::evaluation::condition_diagnostics;
use crate::kernels::{
    beta_update, mh_step, speed_measure_grad_contrib, ChainRecord, DualAveragingState, KernelKind,
    KernelParams, Phi1Grad, Preconditioner,
};
use crate::models::{LatentModel, LinearHvae};
use crate::numerics::{sample_standard_normal, RngStream};
use crate::{Error, Result};

/// Which quantity adapts the proposal during the chain phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptationKind {
    /// Gradient ascent on the speed measure (acceptance + entropy).
    SpeedMeasure,
    /// Dual averaging of a single scalar step size.
    DualAveraging,
    /// No adaptation.
    Fixed,
}

/// Preconditioner shape for the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionerKind {
    Diagonal,
    LowerTriangular,
    /// Identity `C`; reported without a transformed condition number.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Everything a training run needs to know.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Encoder learning rate.
    pub lr_phi0: f64,
    /// Proposal-parameter learning rate.
    pub lr_phi1: f64,
    /// Decoder/prior learning rate.
    pub lr_theta: f64,
    /// Controller rate for the entropy weight.
    pub lr_beta: f64,
    /// Markov chain length per training step.
    pub chain_steps: usize,
    /// Leapfrog steps (HMC).
    pub leapfrog: usize,
    pub pretrain_epochs: usize,
    pub mcmc_epochs: usize,
    pub batch_size: usize,
    /// Target acceptance rate; `None` picks 0.574 (MALA) / 0.65 (HMC).
    pub alpha_star: Option<f64>,
    pub seed: u64,
    pub kernel: KernelKind,
    pub preconditioner: PreconditionerKind,
    pub adaptation: AdaptationKind,
    pub optimizer: OptimizerKind,
    /// Initial proposal scale (MALA step size, or the uniform diagonal
    /// scale absorbed into `C` for HMC).
    pub init_step: f64,
    /// Initial entropy weight. The controller's equilibrium scales like
    /// one over the latent dimension, so large starts can destabilize the
    /// first adaptation phase.
    pub beta_init: f64,
    /// Keep the latent prior's parameters fixed during the chain phase.
    pub freeze_prior_during_mcmc: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_phi0: 1e-3,
            lr_phi1: 1e-3,
            lr_theta: 1e-3,
            lr_beta: 0.05,
            chain_steps: 2,
            leapfrog: 3,
            pretrain_epochs: 0,
            mcmc_epochs: 0,
            batch_size: 100,
            alpha_star: None,
            seed: 0,
            kernel: KernelKind::Mala,
            preconditioner: PreconditionerKind::Diagonal,
            adaptation: AdaptationKind::SpeedMeasure,
            optimizer: OptimizerKind::Adam,
            init_step: 0.1,
            beta_init: 1.0,
            freeze_prior_during_mcmc: false,
        }
    }
}

impl TrainConfig {
    pub fn build_kernel(&self, dim: usize) -> KernelParams {
        let mut k = match self.kernel {
            KernelKind::Mala => KernelParams::mala(dim),
            KernelKind::Hmc => KernelParams::hmc(dim, self.leapfrog),
        };
        match self.kernel {
            KernelKind::Mala => {
                k.log_h = self.init_step.ln();
                k.precond = match self.preconditioner {
                    PreconditionerKind::Diagonal => Preconditioner::identity_diagonal(dim),
                    PreconditionerKind::LowerTriangular => {
                        Preconditioner::identity_lower_triangular(dim)
                    }
                    PreconditionerKind::None => Preconditioner::identity_diagonal(dim),
                };
            }
            KernelKind::Hmc => {
                // Scale absorbed into C.
                k.precond = match self.preconditioner {
                    PreconditionerKind::Diagonal | PreconditionerKind::None => {
                        Preconditioner::Diagonal(vec![self.init_step.ln(); dim])
                    }
                    PreconditionerKind::LowerTriangular => {
                        let mut p = Preconditioner::identity_lower_triangular(dim);
                        p.set_uniform_log_scale(self.init_step.ln());
                        p
                    }
                };
            }
        }
        if let Some(a) = self.alpha_star {
            k.target_accept = a;
        }
        k.beta = self.beta_init;
        k
    }
}

/// First/second-moment optimizer state per named parameter.
#[derive(Debug, Clone, Default)]
pub struct Optimizer {
    kind: OptimizerKindState,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
enum OptimizerKindState {
    Sgd,
    #[default]
    Adam,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind: match kind {
                OptimizerKind::Sgd => OptimizerKindState::Sgd,
                OptimizerKind::Adam => OptimizerKindState::Adam,
            },
            ..Default::default()
        }
    }

    /// Gradient-ascent update `value += lr * step(grad)`. SGD uses the raw
    /// gradient; the Adam-like rule uses bias-corrected moment scaling
    /// with `(0.9, 0.999, 1e-8)`.
    pub fn apply(&mut self, name: &str, value: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(value.len(), grad.len(), "shape of {name}");
        match self.kind {
            OptimizerKindState::Sgd => {
                for (p, g) in value.iter_mut().zip(grad) {
                    *p += lr * g;
                }
            }
            OptimizerKindState::Adam => {
                let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                let m = self
                    .m
                    .entry(name.to_string())
                    .or_insert_with(|| vec![0.0; grad.len()]);
                let v = self
                    .v
                    .entry(name.to_string())
                    .or_insert_with(|| vec![0.0; grad.len()]);
                let t = self.t.entry(name.to_string()).or_insert(0);
                *t += 1;
                let bc1 = 1.0 - b1.powi(*t as i32);
                let bc2 = 1.0 - b2.powi(*t as i32);
                for i in 0..grad.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    value[i] += lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// Mutable state advanced by training steps.
pub struct TrainState {
    /// Proposal parameters and the entropy weight.
    pub kernel: KernelParams,
    pub dual_avg: Option<DualAveragingState>,
    /// Monotone step counter (advances even for skipped steps).
    pub step: u64,
    /// Monotone per-sample counter used to derive chain RNG streams.
    pub sample_counter: u64,
    pub opt_model: Optimizer,
    pub opt_phi1: Optimizer,
    /// Trailing acceptance statistics (chain phase).
    pub recent_accepts: std::collections::VecDeque<(usize, usize)>,
    /// Consecutive failed steps (for error propagation).
    pub consecutive_failures: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, latent_dim: usize) -> Self {
        let kernel = cfg.build_kernel(latent_dim);
        let dual_avg = match cfg.adaptation {
            AdaptationKind::DualAveraging => Some(DualAveragingState::new(cfg.init_step)),
            _ => None,
        };
        TrainState {
            kernel,
            dual_avg,
            step: 0,
            sample_counter: 0,
            opt_model: Optimizer::new(cfg.optimizer),
            opt_phi1: Optimizer::new(cfg.optimizer),
            recent_accepts: std::collections::VecDeque::new(),
            consecutive_failures: 0,
        }
    }

    /// A scalar step-size readout for metrics: the MALA log step, or the
    /// mean log-diagonal of `C` for HMC.
    pub fn log_step_metric(&self) -> f64 {
        match self.kernel.kind {
            KernelKind::Mala => self.kernel.log_h,
            KernelKind::Hmc => match &self.kernel.precond {
                Preconditioner::Diagonal(s) => s.iter().sum::<f64>() / s.len() as f64,
                Preconditioner::LowerTriangular(l) => {
                    l.log_diag().iter().sum::<f64>() / l.dim() as f64
                }
            },
        }
    }
}

/// Diagnostics from one batch step.
pub struct StepStats {
    pub mean_elbo: f64,
    pub accepts: usize,
    pub proposals: usize,
    pub records: Vec<ChainRecord>,
    pub skipped: bool,
}

/// One ELBO step over a batch: single-sample pathwise estimates per
/// element, gradients averaged, decoder and encoder updated. A non-finite
/// loss or gradient aborts the step with state unchanged.
pub fn elbo_step(
    model: &mut dyn LatentModel,
    state: &mut TrainState,
    batch: &[&[f64]],
    cfg: &TrainConfig,
    master_rng: &RngStream,
) -> Result<f64> {
    model.params_mut().zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for x in batch {
        let mut rng = master_rng.derive(state.sample_counter);
        state.sample_counter += 1;
        let eps = sample_standard_normal(model.noise_dim(), &mut rng);
        let mut tape = Tape::new();
        let parts = model.elbo_graph(&mut tape, x, &eps)?;
        let value = tape.value(parts.elbo).item();
        total += value;
        let grads = tape.backward(parts.elbo)?;
        tape.accumulate_params(&grads, model.params_mut(), scale);
    }
    let mean = total * scale;
    if !mean.is_finite() || !model.params().grads_all_finite() {
        model.params_mut().zero_grads();
        state.step += 1;
        return Err(Error::NonFiniteLoss);
    }
    apply_model_updates(model, state, cfg, false);
    state.step += 1;
    Ok(mean)
}

fn apply_model_updates(
    model: &mut dyn LatentModel,
    state: &mut TrainState,
    cfg: &TrainConfig,
    freeze_prior: bool,
) {
    let frozen: Vec<String> = if freeze_prior {
        model.prior_param_names()
    } else {
        Vec::new()
    };
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    for name in names {
        if frozen.iter().any(|f| f == &name) {
            continue;
        }
        let lr = if name.starts_with("theta.") {
            cfg.lr_theta
        } else {
            cfg.lr_phi0
        };
        let grad = model.params().grad(&name).data.clone();
        let store = model.params_mut();
        state
            .opt_model
            .apply(&name, &mut store.value_mut(&name).data, &grad, lr);
    }
}

fn apply_phi1_update(state: &mut TrainState, cfg: &TrainConfig, grad: &Phi1Grad) {
    if cfg.kernel == KernelKind::Mala {
        let mut log_h = [state.kernel.log_h];
        state
            .opt_phi1
            .apply("phi1.log_h", &mut log_h, &[grad.log_h], cfg.lr_phi1);
        state.kernel.log_h = log_h[0];
    }
    match &mut state.kernel.precond {
        Preconditioner::Diagonal(s) => {
            state.opt_phi1.apply("phi1.diag", s, &grad.diag, cfg.lr_phi1);
        }
        Preconditioner::LowerTriangular(l) => {
            state
                .opt_phi1
                .apply("phi1.diag", l.log_diag_mut(), &grad.diag, cfg.lr_phi1);
            state
                .opt_phi1
                .apply("phi1.strict", l.strict_mut(), &grad.strict, cfg.lr_phi1);
        }
    }
}

/// One full training step on a batch: encoder ELBO gradient, `K` kernel
/// steps with adaptation contributions, generative gradient at the final
/// (detached) states, then the four parameter updates.
///
/// With `chain_steps == 0` this degenerates to an encoder-plus-decoder
/// update at `z0` and the controller update is skipped.
pub fn algorithm1_step(
    model: &mut dyn LatentModel,
    state: &mut TrainState,
    batch: &[&[f64]],
    cfg: &TrainConfig,
    master_rng: &RngStream,
) -> Result<StepStats> {
    model.params_mut().zero_grads();
    let b = batch.len();
    let scale = 1.0 / b as f64;
    let kk = cfg.chain_steps;

    let mut phi1_sum = Phi1Grad::zeros_like(&state.kernel);
    let mut theta_grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut records = Vec::new();
    let mut accepts = 0usize;
    let mut total_elbo = 0.0;
    let mut da_stats: Vec<f64> = Vec::new();

    for x in batch {
        let mut rng = master_rng.derive(state.sample_counter);
        state.sample_counter += 1;

        // (i) z0 by reparameterization plus the encoder's ELBO gradient.
        let eps = sample_standard_normal(model.noise_dim(), &mut rng);
        let mut tape = Tape::new();
        let parts = model.elbo_graph(&mut tape, x, &eps)?;
        total_elbo += tape.value(parts.elbo).item();
        let grads = tape.backward(parts.elbo)?;
        tape.accumulate_params_filtered(&grads, model.params_mut(), scale, |n| {
            n.starts_with("phi0.")
        });
        let mut z = parts.z0;
        drop(tape);

        // (ii) K kernel steps with adaptation contributions.
        let potential = model.posterior_potential(x)?;
        for step in 0..kk {
            let out = mh_step(&z, potential.as_ref(), &state.kernel, &mut rng)?;
            if cfg.adaptation == AdaptationKind::SpeedMeasure {
                let g = speed_measure_grad_contrib(&out, &z, potential.as_ref(), &state.kernel)?;
                phi1_sum.add_assign(&g);
            }
            if cfg.adaptation == AdaptationKind::DualAveraging {
                da_stats.push(out.log_alpha.exp().min(1.0));
            }
            if out.accepted {
                accepts += 1;
            }
            records.push(ChainRecord::from_output(step, &out));
            z = out.next_state;
        }

        // (iii) generative gradient at the final state, detached.
        for (name, g) in potential.theta_grad(&z) {
            let slot = theta_grads
                .entry(name)
                .or_insert_with(|| vec![0.0; g.data.len()]);
            for (s, v) in slot.iter_mut().zip(&g.data) {
                *s += scale * v;
            }
        }
    }

    let mean_elbo = total_elbo * scale;
    phi1_sum.scale(scale);

    let finite = mean_elbo.is_finite()
        && model.params().grads_all_finite()
        && phi1_sum.all_finite()
        && theta_grads
            .values()
            .all(|g| g.iter().all(|v| v.is_finite()));
    if !finite {
        model.params_mut().zero_grads();
        state.step += 1;
        state.consecutive_failures += 1;
        return Ok(StepStats {
            mean_elbo,
            accepts: 0,
            proposals: 0,
            records,
            skipped: true,
        });
    }
    state.consecutive_failures = 0;

    // (iv) parameter updates.
    for (name, g) in &theta_grads {
        model.params_mut().add_grad(name, g, 1.0);
    }
    apply_model_updates(model, state, cfg, cfg.freeze_prior_during_mcmc);

    match cfg.adaptation {
        AdaptationKind::SpeedMeasure => {
            if kk > 0 {
                apply_phi1_update(state, cfg, &phi1_sum);
                state.kernel.beta = beta_update(
                    state.kernel.beta,
                    accepts,
                    kk * b,
                    state.kernel.target_accept,
                    cfg.lr_beta,
                );
            }
        }
        AdaptationKind::DualAveraging => {
            if let Some(da) = &mut state.dual_avg {
                for stat in &da_stats {
                    da.advance(*stat, state.kernel.target_accept);
                }
                match state.kernel.kind {
                    KernelKind::Mala => state.kernel.log_h = da.log_h,
                    KernelKind::Hmc => state.kernel.precond.set_uniform_log_scale(da.log_h),
                }
            }
        }
        AdaptationKind::Fixed => {}
    }

    state.step += 1;
    state.recent_accepts.push_back((accepts, kk * b));
    while state.recent_accepts.len() > 64 {
        state.recent_accepts.pop_front();
    }
    Ok(StepStats {
        mean_elbo,
        accepts,
        proposals: kk * b,
        records,
        skipped: false,
    })
}

/// Which phase a metrics row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Mcmc,
}

/// One row of the per-epoch metrics table.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub elbo: f64,
    pub accept_rate: Option<f64>,
    pub beta: Option<f64>,
    pub log_h: Option<f64>,
    /// Mean true-minus-estimated log-evidence, when a generating model is
    /// known and the trained model is linear.
    pub delta_loglik: Option<f64>,
    pub kappa_raw: Option<f64>,
    pub kappa_transformed: Option<f64>,
}

/// A skipped or divergent step, for the JSON-lines event log.
#[derive(Debug, Clone, Serialize)]
pub struct TrainEvent {
    pub step: u64,
    pub epoch: usize,
    pub kind: String,
    pub detail: String,
}

/// Full training output.
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub events: Vec<TrainEvent>,
    pub state: TrainState,
}

/// Runs `pretrain_epochs` of ELBO steps and then `mcmc_epochs` of full
/// steps over shuffled mini-batches. `truth` (the generating model), when
/// given alongside a linear `model`, enables the per-epoch evidence-gap
/// metric; condition diagnostics are emitted whenever `model` is linear.
///
/// Ten consecutive failed steps propagate the underlying error.
pub fn train(
    model: &mut dyn LatentModel,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    truth: Option<&LinearHvae>,
) -> Result<TrainOutcome> {
    assert!(!data.is_empty(), "dataset must be nonempty");
    let mut state = TrainState::new(cfg, model.latent_dim());
    let mut shuffle_rng = RngStream::new(cfg.seed, 0xC0FFEE);
    let master = RngStream::new(cfg.seed, 1);
    let mut metrics = Vec::new();
    let mut events = Vec::new();

    for phase in [Phase::Pretrain, Phase::Mcmc] {
        let epochs = match phase {
            Phase::Pretrain => cfg.pretrain_epochs,
            Phase::Mcmc => cfg.mcmc_epochs,
        };
        for epoch in 0..epochs {
            let order = shuffle_rng.permutation(data.len());
            let mut epoch_elbo = 0.0;
            let mut epoch_batches = 0usize;
            let mut epoch_accepts = 0usize;
            let mut epoch_proposals = 0usize;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
                match phase {
                    Phase::Pretrain => match elbo_step(model, &mut state, &batch, cfg, &master) {
                        Ok(elbo) => {
                            epoch_elbo += elbo;
                            epoch_batches += 1;
                            state.consecutive_failures = 0;
                        }
                        Err(e) => {
                            state.consecutive_failures += 1;
                            events.push(TrainEvent {
                                step: state.step,
                                epoch,
                                kind: "skipped".into(),
                                detail: e.to_string(),
                            });
                            if state.consecutive_failures >= 10 {
                                return Err(e);
                            }
                        }
                    },
                    Phase::Mcmc => {
                        match algorithm1_step(model, &mut state, &batch, cfg, &master) {
                            Ok(stats) => {
                                if stats.skipped {
                                    events.push(TrainEvent {
                                        step: state.step,
                                        epoch,
                                        kind: "skipped".into(),
                                        detail: "non-finite loss or gradient".into(),
                                    });
                                    if state.consecutive_failures >= 10 {
                                        return Err(Error::NonFiniteLoss);
                                    }
                                } else {
                                    epoch_elbo += stats.mean_elbo;
                                    epoch_batches += 1;
                                    epoch_accepts += stats.accepts;
                                    epoch_proposals += stats.proposals;
                                }
                            }
                            Err(e) => {
                                state.consecutive_failures += 1;
                                events.push(TrainEvent {
                                    step: state.step,
                                    epoch,
                                    kind: "error".into(),
                                    detail: e.to_string(),
                                });
                                if state.consecutive_failures >= 10 {
                                    return Err(e);
                                }
                            }
                        }
                    }
                }
            }

            let mut row = EpochMetrics {
                epoch,
                phase,
                elbo: if epoch_batches > 0 {
                    epoch_elbo / epoch_batches as f64
                } else {
                    f64::NAN
                },
                accept_rate: (phase == Phase::Mcmc && epoch_proposals > 0)
                    .then(|| epoch_accepts as f64 / epoch_proposals as f64),
                beta: (phase == Phase::Mcmc).then_some(state.kernel.beta),
                log_h: (phase == Phase::Mcmc).then(|| state.log_step_metric()),
                delta_loglik: None,
                kappa_raw: None,
                kappa_transformed: None,
            };
            if let Some(linear) = model.as_linear() {
                let precond_kind = if phase == Phase::Mcmc {
                    cfg.preconditioner
                } else {
                    PreconditionerKind::None
                };
                let (delta, raw, transformed) =
                    linear_epoch_diagnostics(linear, truth, &state.kernel, precond_kind, data);
                row.delta_loglik = delta;
                row.kappa_raw = raw;
                row.kappa_transformed = transformed;
            }
            metrics.push(row);
        }
    }

    Ok(TrainOutcome {
        metrics,
        events,
        state,
    })
}

/// Writes the metrics table as CSV with the fixed column set.
pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from(
        "epoch,phase,elbo,accept_rate,beta,log_h,delta_loglik,kappa_raw,kappa_transformed\n",
    );
    let fmt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for m in metrics {
        let phase = match m.phase {
            Phase::Pretrain => "pretrain",
            Phase::Mcmc => "mcmc",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.epoch,
            phase,
            m.elbo,
            fmt(m.accept_rate),
            fmt(m.beta),
            fmt(m.log_h),
            fmt(m.delta_loglik),
            fmt(m.kappa_raw),
            fmt(m.kappa_transformed),
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Writes the event log as JSON lines.
pub fn write_events_jsonl(path: &Path, events: &[TrainEvent]) -> Result<()> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Per-epoch analytic diagnostics for linear models: the evidence gap
/// against a generating model and the condition numbers of the posterior
/// precision (raw and preconditioner-transformed).
pub fn linear_epoch_diagnostics(
    model: &LinearHvae,
    truth: Option<&LinearHvae>,
    kernel: &KernelParams,
    precond_kind: PreconditionerKind,
    data: &[Vec<f64>],
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let delta = truth.map(|t| t.mean_marginal_loglik(data) - model.mean_marginal_loglik(data));
    let c = match precond_kind {
        PreconditionerKind::None => None,
        _ => Some(kernel.precond.realize()),
    };
    match condition_diagnostics(model, c.as_ref()) {
        Ok((raw, transformed)) => (delta, Some(raw), transformed),
        Err(_) => (delta, None, None),
    }
}
