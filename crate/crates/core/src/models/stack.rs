use super::common::{
    bernoulli_loglik_node, gaussian_loglik_node, init_weight, layer_kl_node, ElboParts,
    LatentModel, Likelihood, PriorSample,
};
use crate::autodiff::{hvp_default_eps, hvp_finite_difference, NodeId, ParamStore, Tape, Tensor};
use crate::numerics::{RngStream, LN_2PI};
use crate::targets::{Potential, ThetaGrad};
use crate::Result;

/// Generic two-layer top-down hierarchical VAE with MLP maps.
///
/// The deterministic path `d_l` runs top-down through a learned constant
/// `d_1` and the MLP `h_2(z_1, d_1) -> d_2`; each `d_l` splits into a mean
/// half and a log-variance half, so the prior conditional of layer `l` is
/// `N(d_l_mu, exp(d_l_sigma))`. The observation head reads `(z_2, d_2)`.
///
/// The encoder runs bottom-up (`d'_2 = tanh(E2 x)`, `d'_1 = tanh(E1 d'_2)`)
/// and produces residual read-outs `(mu', log sigma')` per layer from the
/// concatenated `(d_l, d'_l)`; read-out weights start at zero so the
/// encoder coincides with the prior at initialization.
pub struct HvaeStack {
    n1: usize,
    n2: usize,
    dx: usize,
    hidden: usize,
    likelihood: Likelihood,
    params: ParamStore,
}

impl HvaeStack {
    pub fn new(
        n1: usize,
        n2: usize,
        dx: usize,
        hidden: usize,
        likelihood: Likelihood,
        rng: &mut RngStream,
    ) -> Self {
        if let Likelihood::Gaussian { log_sigma } = &likelihood {
            assert_eq!(log_sigma.len(), dx);
        }
        let mut params = ParamStore::new();
        params.insert("theta.d1", Tensor::vector(vec![0.0; 2 * n1]));
        params.insert("theta.h2_w1", init_weight(hidden, n1 + 2 * n1, rng));
        params.insert("theta.h2_b1", Tensor::vector(vec![0.0; hidden]));
        params.insert("theta.h2_w2", init_weight(2 * n2, hidden, rng));
        params.insert("theta.h2_b2", Tensor::vector(vec![0.0; 2 * n2]));
        params.insert("theta.g_w1", init_weight(hidden, n2 + 2 * n2, rng));
        params.insert("theta.g_b1", Tensor::vector(vec![0.0; hidden]));
        params.insert("theta.g_w2", init_weight(dx, hidden, rng));
        params.insert("theta.g_b2", Tensor::vector(vec![0.0; dx]));
        params.insert("phi0.bu2_w", init_weight(n2, dx, rng));
        params.insert("phi0.bu2_b", Tensor::vector(vec![0.0; n2]));
        params.insert("phi0.bu1_w", init_weight(n1, n2, rng));
        params.insert("phi0.bu1_b", Tensor::vector(vec![0.0; n1]));
        params.insert(
            "phi0.read1_w",
            Tensor::matrix(n1, 3 * n1, vec![0.0; n1 * 3 * n1]),
        );
        params.insert("phi0.read1_b", Tensor::vector(vec![0.0; n1]));
        params.insert(
            "phi0.scale1_w",
            Tensor::matrix(n1, 3 * n1, vec![0.0; n1 * 3 * n1]),
        );
        params.insert("phi0.scale1_b", Tensor::vector(vec![0.0; n1]));
        params.insert(
            "phi0.read2_w",
            Tensor::matrix(n2, 3 * n2, vec![0.0; n2 * 3 * n2]),
        );
        params.insert("phi0.read2_b", Tensor::vector(vec![0.0; n2]));
        params.insert(
            "phi0.scale2_w",
            Tensor::matrix(n2, 3 * n2, vec![0.0; n2 * 3 * n2]),
        );
        params.insert("phi0.scale2_b", Tensor::vector(vec![0.0; n2]));
        HvaeStack {
            n1,
            n2,
            dx,
            hidden,
            likelihood,
            params,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n1, self.n2, self.dx)
    }

    /// `d_2 = h_2(z_1, d_1)` on a tape.
    fn top_down_node(&self, tape: &mut Tape, z1: NodeId, d1: NodeId) -> Result<NodeId> {
        let input = tape.concat(z1, d1)?;
        let w1 = tape.param(&self.params, "theta.h2_w1");
        let b1 = tape.param(&self.params, "theta.h2_b1");
        let h = tape.affine(w1, input, b1)?;
        let t = tape.tanh(h);
        let w2 = tape.param(&self.params, "theta.h2_w2");
        let b2 = tape.param(&self.params, "theta.h2_b2");
        tape.affine(w2, t, b2)
    }

    /// Observation head `g(z_2, d_2)` on a tape.
    fn obs_head_node(&self, tape: &mut Tape, z2: NodeId, d2: NodeId) -> Result<NodeId> {
        let input = tape.concat(z2, d2)?;
        let w1 = tape.param(&self.params, "theta.g_w1");
        let b1 = tape.param(&self.params, "theta.g_b1");
        let h = tape.affine(w1, input, b1)?;
        let t = tape.tanh(h);
        let w2 = tape.param(&self.params, "theta.g_w2");
        let b2 = tape.param(&self.params, "theta.g_b2");
        tape.affine(w2, t, b2)
    }

    fn loglik_node(&self, tape: &mut Tape, x: &[f64], obs: NodeId) -> Result<NodeId> {
        match &self.likelihood {
            Likelihood::Gaussian { log_sigma } => gaussian_loglik_node(tape, x, obs, log_sigma),
            Likelihood::Bernoulli => bernoulli_loglik_node(tape, x, obs),
        }
    }

    /// `log p(z1) + log p(z2 | z1)` at latent nodes, plus `d_2` for reuse.
    fn prior_loglik_node(
        &self,
        tape: &mut Tape,
        z1: NodeId,
        z2: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let d1 = tape.param(&self.params, "theta.d1");
        let mu1 = tape.slice(d1, 0, self.n1)?;
        let d1_sigma = tape.slice(d1, self.n1, self.n1)?;
        let log_sigma1 = tape.scale(d1_sigma, 0.5);
        let lp1 = diag_gaussian_node(tape, z1, mu1, log_sigma1, self.n1)?;

        let d2 = self.top_down_node(tape, z1, d1)?;
        let mu2 = tape.slice(d2, 0, self.n2)?;
        let d2_sigma = tape.slice(d2, self.n2, self.n2)?;
        let log_sigma2 = tape.scale(d2_sigma, 0.5);
        let lp2 = diag_gaussian_node(tape, z2, mu2, log_sigma2, self.n2)?;

        Ok((tape.add(lp1, lp2)?, d2))
    }

    /// Residual read-outs at given deterministic variables, then the
    /// closed-form layer KL.
    pub fn layer_kl(&self, layer: usize, d_l: &[f64], d_enc_l: &[f64]) -> f64 {
        let (rw, rb, sw, sb, n) = match layer {
            1 => (
                "phi0.read1_w",
                "phi0.read1_b",
                "phi0.scale1_w",
                "phi0.scale1_b",
                self.n1,
            ),
            2 => (
                "phi0.read2_w",
                "phi0.read2_b",
                "phi0.scale2_w",
                "phi0.scale2_b",
                self.n2,
            ),
            _ => panic!("layer must be 1 or 2"),
        };
        assert_eq!(d_l.len(), 2 * n);
        assert_eq!(d_enc_l.len(), n);
        let mut input = Vec::with_capacity(3 * n);
        input.extend_from_slice(d_l);
        input.extend_from_slice(d_enc_l);
        let read = super::common::tensor_as_matrix(&self.params, rw);
        let scale = super::common::tensor_as_matrix(&self.params, sw);
        let mu: Vec<f64> = read
            .matvec(&input)
            .iter()
            .zip(&self.params.value(rb).data)
            .map(|(a, b)| a + b)
            .collect();
        let sigma: Vec<f64> = scale
            .matvec(&input)
            .iter()
            .zip(&self.params.value(sb).data)
            .map(|(a, b)| (a + b).exp())
            .collect();
        super::common::layer_kl_closed_form(&mu, &sigma)
    }
}

/// `log N(z; mu, exp(log_sigma)^2)` with all three as nodes.
fn diag_gaussian_node(
    tape: &mut Tape,
    z: NodeId,
    mu: NodeId,
    log_sigma: NodeId,
    dim: usize,
) -> Result<NodeId> {
    let diff = tape.sub(z, mu)?;
    let neg_ls = tape.scale(log_sigma, -1.0);
    let inv = tape.exp(neg_ls);
    let scaled = tape.mul(diff, inv)?;
    let sq = tape.square(scaled);
    let quad = tape.sum(sq);
    let half = tape.scale(quad, -0.5);
    let ls_sum = tape.sum(log_sigma);
    let neg_sum = tape.scale(ls_sum, -1.0);
    let partial = tape.add(half, neg_sum)?;
    Ok(tape.add_const(partial, -0.5 * dim as f64 * LN_2PI))
}

impl LatentModel for HvaeStack {
    fn data_dim(&self) -> usize {
        self.dx
    }

    fn latent_dim(&self) -> usize {
        self.n1 + self.n2
    }

    fn noise_dim(&self) -> usize {
        self.n1 + self.n2
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn elbo_graph(&self, tape: &mut Tape, x: &[f64], eps: &[f64]) -> Result<ElboParts> {
        let (n1, n2) = (self.n1, self.n2);
        assert_eq!(eps.len(), n1 + n2);
        let xc = tape.constant_vector(x);

        // Bottom-up deterministic pass.
        let bu2_w = tape.param(&self.params, "phi0.bu2_w");
        let bu2_b = tape.param(&self.params, "phi0.bu2_b");
        let pre2 = tape.affine(bu2_w, xc, bu2_b)?;
        let d2e = tape.tanh(pre2);
        let bu1_w = tape.param(&self.params, "phi0.bu1_w");
        let bu1_b = tape.param(&self.params, "phi0.bu1_b");
        let pre1 = tape.affine(bu1_w, d2e, bu1_b)?;
        let d1e = tape.tanh(pre1);

        // Layer 1.
        let d1 = tape.param(&self.params, "theta.d1");
        let mu1_prior = tape.slice(d1, 0, n1)?;
        let d1_sigma = tape.slice(d1, n1, n1)?;
        let log_sigma1_prior = tape.scale(d1_sigma, 0.5);
        let sigma1_prior = tape.exp(log_sigma1_prior);
        let in1 = tape.concat(d1, d1e)?;
        let r1w = tape.param(&self.params, "phi0.read1_w");
        let r1b = tape.param(&self.params, "phi0.read1_b");
        let mu1_res = tape.affine(r1w, in1, r1b)?;
        let s1w = tape.param(&self.params, "phi0.scale1_w");
        let s1b = tape.param(&self.params, "phi0.scale1_b");
        let ls1_res = tape.affine(s1w, in1, s1b)?;
        let sigma1_res = tape.exp(ls1_res);
        let eps1 = tape.constant_vector(&eps[..n1]);
        let inner1 = tape.scale_shift(eps1, sigma1_res, mu1_res)?;
        let z1 = tape.scale_shift(inner1, sigma1_prior, mu1_prior)?;
        let kl1 = layer_kl_node(tape, mu1_res, ls1_res)?;

        // Layer 2.
        let d2 = self.top_down_node(tape, z1, d1)?;
        let mu2_prior = tape.slice(d2, 0, n2)?;
        let d2_sigma = tape.slice(d2, n2, n2)?;
        let log_sigma2_prior = tape.scale(d2_sigma, 0.5);
        let sigma2_prior = tape.exp(log_sigma2_prior);
        let in2 = tape.concat(d2, d2e)?;
        let r2w = tape.param(&self.params, "phi0.read2_w");
        let r2b = tape.param(&self.params, "phi0.read2_b");
        let mu2_res = tape.affine(r2w, in2, r2b)?;
        let s2w = tape.param(&self.params, "phi0.scale2_w");
        let s2b = tape.param(&self.params, "phi0.scale2_b");
        let ls2_res = tape.affine(s2w, in2, s2b)?;
        let sigma2_res = tape.exp(ls2_res);
        let eps2 = tape.constant_vector(&eps[n1..]);
        let inner2 = tape.scale_shift(eps2, sigma2_res, mu2_res)?;
        let z2 = tape.scale_shift(inner2, sigma2_prior, mu2_prior)?;
        let kl2 = layer_kl_node(tape, mu2_res, ls2_res)?;

        // Observation.
        let obs = self.obs_head_node(tape, z2, d2)?;
        let recon = self.loglik_node(tape, x, obs)?;
        let kl = tape.add(kl1, kl2)?;
        let elbo = tape.sub(recon, kl)?;

        let mut z0 = tape.value(z1).data.clone();
        z0.extend_from_slice(&tape.value(z2).data);
        Ok(ElboParts {
            elbo,
            recon,
            kl,
            z0,
        })
    }

    fn encoder_moments(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        // Mean path: run the ELBO graph with zero noise and read off the
        // layer means and conditional scales.
        let mut tape = Tape::new();
        let eps = vec![0.0; self.noise_dim()];
        let parts = self
            .elbo_graph(&mut tape, x, &eps)
            .expect("shapes fixed");
        let mean = parts.z0;
        // Conditional scales: prior sigma times residual sigma per layer;
        // recompute cheaply by replaying with unit noise and differencing.
        let ones = vec![1.0; self.noise_dim()];
        let mut tape2 = Tape::new();
        let shifted = self
            .elbo_graph(&mut tape2, x, &ones)
            .expect("shapes fixed");
        let scales: Vec<f64> = shifted
            .z0
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b).abs().max(1e-12))
            .collect();
        (mean, scales)
    }

    fn posterior_potential(&self, x: &[f64]) -> Result<Box<dyn Potential + '_>> {
        Ok(Box::new(StackPotential {
            model: self,
            x: x.to_vec(),
        }))
    }

    fn log_joint(&self, x: &[f64], z: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let z1 = tape.constant_vector(&z[..self.n1]);
        let z2 = tape.constant_vector(&z[self.n1..]);
        let (prior, d2) = self
            .prior_loglik_node(&mut tape, z1, z2)
            .expect("shapes fixed");
        let obs = self.obs_head_node(&mut tape, z2, d2).expect("shapes fixed");
        let loglik = self.loglik_node(&mut tape, x, obs).expect("shapes fixed");
        tape.value(prior).item() + tape.value(loglik).item()
    }

    fn theta_grad(&self, x: &[f64], z: &[f64]) -> ThetaGrad {
        let mut tape = Tape::new();
        let z1 = tape.constant_vector(&z[..self.n1]);
        let z2 = tape.constant_vector(&z[self.n1..]);
        let (prior, d2) = self
            .prior_loglik_node(&mut tape, z1, z2)
            .expect("shapes fixed");
        let obs = self.obs_head_node(&mut tape, z2, d2).expect("shapes fixed");
        let loglik = self.loglik_node(&mut tape, x, obs).expect("shapes fixed");
        let joint = tape.add(prior, loglik).expect("scalar add");
        let grads = tape.backward(joint).expect("scalar output");
        let mut sink = ParamStore::new();
        for name in self.params.names_with_prefix("theta.") {
            sink.insert(name, Tensor::zeros(self.params.value(name).shape));
        }
        tape.accumulate_params(&grads, &mut sink, 1.0);
        self.params
            .names_with_prefix("theta.")
            .map(|n| (n.to_string(), sink.grad(n).clone()))
            .collect()
    }

    fn prior_sample(&self, rng: &mut RngStream) -> PriorSample {
        let mut tape = Tape::new();
        let d1_vals = self.params.value("theta.d1").data.clone();
        let mu1: Vec<f64> = d1_vals[..self.n1].to_vec();
        let sigma1: Vec<f64> = d1_vals[self.n1..].iter().map(|v| (0.5 * v).exp()).collect();
        let z1: Vec<f64> = mu1
            .iter()
            .zip(&sigma1)
            .map(|(m, s)| m + s * rng.standard_normal())
            .collect();
        let z1n = tape.constant_vector(&z1);
        let d1n = tape.constant_vector(&d1_vals);
        let d2n = self.top_down_node(&mut tape, z1n, d1n).expect("shapes fixed");
        let d2 = tape.value(d2n).data.clone();
        let z2: Vec<f64> = (0..self.n2)
            .map(|i| d2[i] + (0.5 * d2[self.n2 + i]).exp() * rng.standard_normal())
            .collect();
        PriorSample {
            z: vec![z1, z2],
            d: vec![d1_vals, d2],
        }
    }

    fn prior_param_names(&self) -> Vec<String> {
        vec![
            "theta.d1".into(),
            "theta.h2_w1".into(),
            "theta.h2_b1".into(),
            "theta.h2_w2".into(),
            "theta.h2_b2".into(),
        ]
    }

    fn checkpoint_meta(&self) -> String {
        let prefix = format!(
            "kind=hvae-stack n1={} n2={} dx={} hidden={}",
            self.n1, self.n2, self.dx, self.hidden
        );
        match &self.likelihood {
            Likelihood::Gaussian { log_sigma } => {
                let sigma = log_sigma.first().copied().unwrap_or(0.0).exp();
                format!("{prefix} likelihood=gaussian obs_sigma={sigma}")
            }
            Likelihood::Bernoulli => format!("{prefix} likelihood=bernoulli"),
        }
    }
}

/// Tape-backed potential over the stacked latent `(z1, z2)`.
struct StackPotential<'a> {
    model: &'a HvaeStack,
    x: Vec<f64>,
}

impl StackPotential<'_> {
    fn graph(&self, z: &[f64]) -> (Tape, NodeId, NodeId, NodeId) {
        let m = self.model;
        let mut tape = Tape::new();
        let z1 = tape.constant_vector(&z[..m.n1]);
        let z2 = tape.constant_vector(&z[m.n1..]);
        let (prior, d2) = m
            .prior_loglik_node(&mut tape, z1, z2)
            .expect("shapes fixed");
        let obs = m.obs_head_node(&mut tape, z2, d2).expect("shapes fixed");
        let loglik = m.loglik_node(&mut tape, &self.x, obs).expect("shapes fixed");
        let joint = tape.add(prior, loglik).expect("scalar add");
        let u = tape.scale(joint, -1.0);
        (tape, u, z1, z2)
    }
}

impl Potential for StackPotential<'_> {
    fn dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let (tape, u, _, _) = self.graph(z);
        tape.value(u).item()
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let (tape, u, z1, z2) = self.graph(z);
        let grads = tape.backward(u).expect("scalar output");
        let mut out = Vec::with_capacity(z.len());
        out.extend_from_slice(grads.node(z1).unwrap_or(&vec![0.0; self.model.n1]));
        out.extend_from_slice(grads.node(z2).unwrap_or(&vec![0.0; self.model.n2]));
        out
    }

    fn hvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let eps = hvp_default_eps(z);
        hvp_finite_difference(|p| self.grad(p), z, v, eps)
    }

    fn theta_grad(&self, z: &[f64]) -> ThetaGrad {
        self.model.theta_grad(&self.x, z)
    }
}
