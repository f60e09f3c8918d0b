use super::common::{
    bernoulli_logpdf, bernoulli_loglik_node, diag_gaussian_logpdf, gaussian_loglik_node,
    init_weight, layer_kl_node, ElboParts, LatentModel, Likelihood, PriorSample,
};
use crate::autodiff::{hvp_default_eps, hvp_finite_difference, NodeId, ParamStore, Tape, Tensor};
use crate::numerics::{RngStream, LN_2PI};
use crate::targets::{Potential, ThetaGrad};
use crate::Result;

/// Small MLP VAE: one tanh hidden layer on each side, standard normal
/// prior, Gaussian (fixed diagonal variance) or Bernoulli observation
/// head. Used for nonlinear smoke tests.
pub struct MlpVae {
    dz: usize,
    dx: usize,
    hidden: usize,
    likelihood: Likelihood,
    params: ParamStore,
}

impl MlpVae {
    pub fn new(
        dz: usize,
        dx: usize,
        hidden: usize,
        likelihood: Likelihood,
        rng: &mut RngStream,
    ) -> Self {
        if let Likelihood::Gaussian { log_sigma } = &likelihood {
            assert_eq!(log_sigma.len(), dx);
        }
        let mut params = ParamStore::new();
        params.insert("theta.dec_w1", init_weight(hidden, dz, rng));
        params.insert("theta.dec_b1", Tensor::vector(vec![0.0; hidden]));
        params.insert("theta.dec_w2", init_weight(dx, hidden, rng));
        params.insert("theta.dec_b2", Tensor::vector(vec![0.0; dx]));
        params.insert("phi0.enc_w1", init_weight(hidden, dx, rng));
        params.insert("phi0.enc_b1", Tensor::vector(vec![0.0; hidden]));
        params.insert("phi0.enc_mean_w", init_weight(dz, hidden, rng));
        params.insert("phi0.enc_mean_b", Tensor::vector(vec![0.0; dz]));
        params.insert(
            "phi0.enc_scale_w",
            Tensor::matrix(dz, hidden, vec![0.0; dz * hidden]),
        );
        params.insert("phi0.enc_scale_b", Tensor::vector(vec![0.0; dz]));
        MlpVae {
            dz,
            dx,
            hidden,
            likelihood,
            params,
        }
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    /// Decoder forward pass on a tape: observation parameters (Gaussian
    /// mean or Bernoulli logits) at latent node `z`.
    pub fn decode_node(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let w1 = tape.param(&self.params, "theta.dec_w1");
        let b1 = tape.param(&self.params, "theta.dec_b1");
        let h = tape.affine(w1, z, b1)?;
        let t = tape.tanh(h);
        let w2 = tape.param(&self.params, "theta.dec_w2");
        let b2 = tape.param(&self.params, "theta.dec_b2");
        tape.affine(w2, t, b2)
    }

    /// Encoder forward pass on a tape: mean and log-scale nodes of the
    /// Gaussian `q0(z|x)`.
    pub fn encode_node(&self, tape: &mut Tape, x: &[f64]) -> Result<(NodeId, NodeId)> {
        let xc = tape.constant_vector(x);
        let w1 = tape.param(&self.params, "phi0.enc_w1");
        let b1 = tape.param(&self.params, "phi0.enc_b1");
        let h = tape.affine(w1, xc, b1)?;
        let t = tape.tanh(h);
        let mw = tape.param(&self.params, "phi0.enc_mean_w");
        let mb = tape.param(&self.params, "phi0.enc_mean_b");
        let mean = tape.affine(mw, t, mb)?;
        let sw = tape.param(&self.params, "phi0.enc_scale_w");
        let sb = tape.param(&self.params, "phi0.enc_scale_b");
        let log_scale = tape.affine(sw, t, sb)?;
        Ok((mean, log_scale))
    }

    fn loglik_node(&self, tape: &mut Tape, x: &[f64], obs: NodeId) -> Result<NodeId> {
        match &self.likelihood {
            Likelihood::Gaussian { log_sigma } => gaussian_loglik_node(tape, x, obs, log_sigma),
            Likelihood::Bernoulli => bernoulli_loglik_node(tape, x, obs),
        }
    }

    fn decode_values(&self, z: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let zc = tape.constant_vector(z);
        let obs = self.decode_node(&mut tape, zc).expect("shapes fixed");
        tape.value(obs).data.clone()
    }
}

impl LatentModel for MlpVae {
    fn data_dim(&self) -> usize {
        self.dx
    }

    fn latent_dim(&self) -> usize {
        self.dz
    }

    fn noise_dim(&self) -> usize {
        self.dz
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn elbo_graph(&self, tape: &mut Tape, x: &[f64], eps: &[f64]) -> Result<ElboParts> {
        assert_eq!(eps.len(), self.dz);
        let (mean, log_scale) = self.encode_node(tape, x)?;
        let sigma = tape.exp(log_scale);
        let epsc = tape.constant_vector(eps);
        let z0 = tape.scale_shift(epsc, sigma, mean)?;
        let obs = self.decode_node(tape, z0)?;
        let recon = self.loglik_node(tape, x, obs)?;
        let kl = layer_kl_node(tape, mean, log_scale)?;
        let elbo = tape.sub(recon, kl)?;
        Ok(ElboParts {
            elbo,
            recon,
            kl,
            z0: tape.value(z0).data.clone(),
        })
    }

    fn encoder_moments(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let (mean, log_scale) = self.encode_node(&mut tape, x).expect("shapes fixed");
        let m = tape.value(mean).data.clone();
        let s = tape.value(log_scale).data.iter().map(|v| v.exp()).collect();
        (m, s)
    }

    fn posterior_potential(&self, x: &[f64]) -> Result<Box<dyn Potential + '_>> {
        Ok(Box::new(MlpPotential {
            model: self,
            x: x.to_vec(),
        }))
    }

    fn log_joint(&self, x: &[f64], z: &[f64]) -> f64 {
        let obs = self.decode_values(z);
        let loglik = match &self.likelihood {
            Likelihood::Gaussian { log_sigma } => diag_gaussian_logpdf(x, &obs, log_sigma),
            Likelihood::Bernoulli => bernoulli_logpdf(x, &obs),
        };
        let prior =
            -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.dz as f64 * LN_2PI;
        loglik + prior
    }

    fn theta_grad(&self, x: &[f64], z: &[f64]) -> ThetaGrad {
        let mut tape = Tape::new();
        let zc = tape.constant_vector(z);
        let obs = self.decode_node(&mut tape, zc).expect("shapes fixed");
        let loglik = self.loglik_node(&mut tape, x, obs).expect("shapes fixed");
        // The standard-normal prior carries no generative parameters.
        let grads = tape.backward(loglik).expect("scalar output");
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
        let z: Vec<f64> = (0..self.dz).map(|_| rng.standard_normal()).collect();
        PriorSample {
            z: vec![z],
            d: vec![Vec::new()],
        }
    }

    fn prior_param_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn checkpoint_meta(&self) -> String {
        let prefix = format!(
            "kind=mlp-vae dz={} dx={} hidden={}",
            self.dz, self.dx, self.hidden
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

/// Tape-backed potential for the MLP model: value and gradient from a
/// fresh graph per call, curvature by finite differences.
struct MlpPotential<'a> {
    model: &'a MlpVae,
    x: Vec<f64>,
}

impl MlpPotential<'_> {
    fn graph(&self, z: &[f64]) -> (Tape, NodeId, NodeId) {
        let mut tape = Tape::new();
        let zc = tape.constant_vector(z);
        let obs = self
            .model
            .decode_node(&mut tape, zc)
            .expect("shapes fixed");
        let loglik = self
            .model
            .loglik_node(&mut tape, &self.x, obs)
            .expect("shapes fixed");
        // U = -loglik + 1/2 ||z||^2 + const
        let sq = tape.square(zc);
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        let neg_ll = tape.scale(loglik, -1.0);
        let partial = tape.add(neg_ll, half).expect("scalar add");
        let u = tape.add_const(partial, 0.5 * self.model.dz as f64 * LN_2PI);
        (tape, u, zc)
    }
}

impl Potential for MlpPotential<'_> {
    fn dim(&self) -> usize {
        self.model.dz
    }

    fn value(&self, z: &[f64]) -> f64 {
        let (tape, u, _) = self.graph(z);
        tape.value(u).item()
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let (tape, u, zc) = self.graph(z);
        let grads = tape.backward(u).expect("scalar output");
        grads
            .node(zc)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; z.len()])
    }

    fn hvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let eps = hvp_default_eps(z);
        hvp_finite_difference(|p| self.grad(p), z, v, eps)
    }

    fn theta_grad(&self, z: &[f64]) -> ThetaGrad {
        self.model.theta_grad(&self.x, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_posterior_potential;
    use crate::targets::potential_hvp;

    #[test]
    fn zero_decoder_outputs_constant_zero_mean() {
        let mut rng = RngStream::new(110, 0);
        let mut m = MlpVae::new(
            2,
            3,
            8,
            Likelihood::Gaussian {
                log_sigma: vec![0.0; 3],
            },
            &mut rng,
        );
        m.params_mut().value_mut("theta.dec_w1").data.fill(0.0);
        m.params_mut().value_mut("theta.dec_w2").data.fill(0.0);
        let out = m.decode_values(&[1.0, -2.0]);
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn bernoulli_at_zero_logits_is_uniform() {
        let mut rng = RngStream::new(111, 0);
        let mut m = MlpVae::new(2, 4, 8, Likelihood::Bernoulli, &mut rng);
        m.params_mut().value_mut("theta.dec_w2").data.fill(0.0);
        m.params_mut().value_mut("theta.dec_b2").data.fill(0.0);
        let x = [1.0, 0.0, 1.0, 1.0];
        let z = [0.5, -0.5];
        let want = -4.0 * (2.0f64).ln() - 0.5 * 2.0 * LN_2PI - 0.25;
        let got = m.log_joint(&x, &z);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn decoder_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(112, 0);
        let mut m = MlpVae::new(
            3,
            4,
            6,
            Likelihood::Gaussian {
                log_sigma: vec![(0.5f64).ln(); 4],
            },
            &mut rng,
        );
        let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let z: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let grads = m.theta_grad(&x, &z);
        for (name, g) in grads {
            for idx in 0..g.data.len().min(6) {
                let orig = m.params().value(&name).data[idx];
                m.params_mut().value_mut(&name).data[idx] = orig + 1e-6;
                let up = m.log_joint(&x, &z);
                m.params_mut().value_mut(&name).data[idx] = orig - 1e-6;
                let down = m.log_joint(&x, &z);
                m.params_mut().value_mut(&name).data[idx] = orig;
                let fd = (up - down) / 2e-6;
                assert!(
                    (g.data[idx] - fd).abs() / fd.abs().max(1.0) <= 1e-4,
                    "{name}[{idx}]"
                );
            }
        }
    }

    #[test]
    fn potential_grad_matches_value_fd_and_hessian_is_symmetric() {
        let mut rng = RngStream::new(113, 0);
        let m = MlpVae::new(
            3,
            4,
            6,
            Likelihood::Gaussian {
                log_sigma: vec![(0.7f64).ln(); 4],
            },
            &mut rng,
        );
        let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let pot = build_posterior_potential(&m, &x).unwrap();
        let z: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();

        let g = pot.grad(&z);
        for i in 0..3 {
            let mut zp = z.clone();
            zp[i] += 1e-5;
            let mut zm = z.clone();
            zm[i] -= 1e-5;
            let fd = (pot.value(&zp) - pot.value(&zm)) / 2e-5;
            assert!((g[i] - fd).abs() / fd.abs().max(1.0) <= 1e-4);
        }

        let v: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let hv = potential_hvp(pot.as_ref(), &z, &v).unwrap();
        let hw = potential_hvp(pot.as_ref(), &z, &w).unwrap();
        let vhw: f64 = v.iter().zip(&hw).map(|(a, b)| a * b).sum();
        let whv: f64 = w.iter().zip(&hv).map(|(a, b)| a * b).sum();
        assert!(
            (vhw - whv).abs() / vhw.abs().max(1e-6) <= 1e-4,
            "{vhw} vs {whv}"
        );
    }

    #[test]
    fn elbo_gradient_wrt_encoder_matches_fd() {
        let mut rng = RngStream::new(114, 0);
        let mut m = MlpVae::new(
            2,
            3,
            5,
            Likelihood::Gaussian {
                log_sigma: vec![0.0; 3],
            },
            &mut rng,
        );
        let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let eps: Vec<f64> = (0..2).map(|_| rng.standard_normal()).collect();
        let eval = |mm: &MlpVae| {
            let mut tape = Tape::new();
            let parts = mm.elbo_graph(&mut tape, &x, &eps).unwrap();
            tape.value(parts.elbo).item()
        };
        let grads = {
            let mut tape = Tape::new();
            let parts = m.elbo_graph(&mut tape, &x, &eps).unwrap();
            let g = tape.backward(parts.elbo).unwrap();
            let mut sink = ParamStore::new();
            for name in m.params().names_with_prefix("phi0.") {
                sink.insert(name, Tensor::zeros(m.params().value(name).shape));
            }
            tape.accumulate_params(&g, &mut sink, 1.0);
            let names: Vec<String> = sink.names().map(str::to_string).collect();
            names
                .into_iter()
                .map(|n| (n.clone(), sink.grad(&n).clone()))
                .collect::<Vec<_>>()
        };
        for (name, g) in grads {
            for idx in 0..g.data.len().min(4) {
                let orig = m.params().value(&name).data[idx];
                m.params_mut().value_mut(&name).data[idx] = orig + 1e-6;
                let up = eval(&m);
                m.params_mut().value_mut(&name).data[idx] = orig - 1e-6;
                let down = eval(&m);
                m.params_mut().value_mut(&name).data[idx] = orig;
                let fd = (up - down) / 2e-6;
                assert!(
                    (g.data[idx] - fd).abs() / fd.abs().max(1.0) <= 1e-4,
                    "{name}[{idx}]: {} vs {fd}",
                    g.data[idx]
                );
            }
        }
    }
}
