use super::common::{
    diag_gaussian_logpdf, init_weight, layer_kl_closed_form, layer_kl_node, tensor_as_matrix,
    ElboParts, LatentModel, PriorSample,
};
use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};
use crate::numerics::{
    cholesky, gaussian_logpdf, DenseMatrix, LowerTriangularFactor, RngStream, LN_2PI,
};
use crate::targets::{Potential, ThetaGrad};
use crate::Result;

/// Two-layer linear-Gaussian hierarchical VAE.
///
/// Generative side:
///
/// ```text
/// z1 ~ N(0, I_{n1})
/// z2 | z1 ~ N(A2 z1 + c2_mu, diag(sigma_z2^2))
/// x | z ~ N(Wz z2 + Wd d2_mu + b, diag(sigma_x^2)),   d2_mu = A2 z1 + c2_mu
/// ```
///
/// which is a probabilistic-PCA-style model with combined observation map
/// `W = [Wd A2, Wz]` on `z = (z1, z2)`. Every moment is closed form:
/// the prior covariance has identity top-left block and `A2 A2^T + Lambda`
/// bottom-right, and the posterior covariance is the prior covariance
/// minus `(W Sigma_z)^T Sigma_x^{-1} (W Sigma_z)`, independent of `x`.
///
/// Encoder side: a linear bottom-up pass (`d'2 = E2 x + e2`,
/// `d'1 = E1 d'2 + e1`) feeding residual read-outs with constant
/// per-layer scales.
pub struct LinearHvae {
    n1: usize,
    n2: usize,
    dx: usize,
    params: ParamStore,
}

impl LinearHvae {
    /// Dimensions only; all parameters zero-initialized except unit scales.
    pub fn zeros(n1: usize, n2: usize, dx: usize) -> Self {
        let mut params = ParamStore::new();
        params.insert("theta.prior_w2", Tensor::matrix(n2, n1, vec![0.0; n2 * n1]));
        params.insert("theta.prior_b2", Tensor::vector(vec![0.0; n2]));
        params.insert("theta.prior_log_sigma2", Tensor::vector(vec![0.0; n2]));
        params.insert("theta.dec_wz", Tensor::matrix(dx, n2, vec![0.0; dx * n2]));
        params.insert("theta.dec_wd", Tensor::matrix(dx, n2, vec![0.0; dx * n2]));
        params.insert("theta.dec_b", Tensor::vector(vec![0.0; dx]));
        params.insert("theta.obs_log_sigma", Tensor::vector(vec![0.0; dx]));
        params.insert("phi0.enc_w2", Tensor::matrix(n2, dx, vec![0.0; n2 * dx]));
        params.insert("phi0.enc_b2", Tensor::vector(vec![0.0; n2]));
        params.insert("phi0.enc_w1", Tensor::matrix(n1, n2, vec![0.0; n1 * n2]));
        params.insert("phi0.enc_b1", Tensor::vector(vec![0.0; n1]));
        params.insert(
            "phi0.read_w1",
            Tensor::matrix(n1, 3 * n1, vec![0.0; n1 * 3 * n1]),
        );
        params.insert("phi0.read_b1", Tensor::vector(vec![0.0; n1]));
        params.insert(
            "phi0.read_w2",
            Tensor::matrix(n2, 3 * n2, vec![0.0; n2 * 3 * n2]),
        );
        params.insert("phi0.read_b2", Tensor::vector(vec![0.0; n2]));
        params.insert("phi0.log_scale1", Tensor::vector(vec![0.0; n1]));
        params.insert("phi0.log_scale2", Tensor::vector(vec![0.0; n2]));
        LinearHvae { n1, n2, dx, params }
    }

    /// Random model: generative weights `N(0, 1/sqrt(fan_in))`, unit prior
    /// conditional scales, observation scale `obs_sigma`. The encoder
    /// bottom-up maps are random and the residual read-outs start at zero
    /// (encoder = prior).
    pub fn random(n1: usize, n2: usize, dx: usize, obs_sigma: f64, rng: &mut RngStream) -> Self {
        let mut m = Self::zeros(n1, n2, dx);
        *m.params.value_mut("theta.prior_w2") = init_weight(n2, n1, rng);
        *m.params.value_mut("theta.dec_wz") = init_weight(dx, n2, rng);
        *m.params.value_mut("theta.dec_wd") = init_weight(dx, n2, rng);
        m.params
            .value_mut("theta.obs_log_sigma")
            .data
            .iter_mut()
            .for_each(|v| *v = obs_sigma.ln());
        *m.params.value_mut("phi0.enc_w2") = init_weight(n2, dx, rng);
        *m.params.value_mut("phi0.enc_w1") = init_weight(n1, n2, rng);
        m
    }

    pub fn from_parts(n1: usize, n2: usize, dx: usize, tensors: Vec<(String, Tensor)>) -> Self {
        let mut m = Self::zeros(n1, n2, dx);
        for (name, t) in tensors {
            assert!(m.params.contains(&name), "unknown tensor {name}");
            *m.params.value_mut(&name) = t;
        }
        m
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n1, self.n2, self.dx)
    }

    fn a2(&self) -> DenseMatrix {
        tensor_as_matrix(&self.params, "theta.prior_w2")
    }

    fn c2_mu(&self) -> &[f64] {
        &self.params.value("theta.prior_b2").data
    }

    fn log_sigma_z2(&self) -> &[f64] {
        &self.params.value("theta.prior_log_sigma2").data
    }

    fn obs_log_sigma(&self) -> &[f64] {
        &self.params.value("theta.obs_log_sigma").data
    }

    /// Combined observation map `W = [Wd A2, Wz]` and offset
    /// `m = b + Wd c2_mu`, so that `E[x|z] = W z + m`.
    pub fn combined_obs_map(&self) -> (DenseMatrix, Vec<f64>) {
        let a2 = self.a2();
        let wz = tensor_as_matrix(&self.params, "theta.dec_wz");
        let wd = tensor_as_matrix(&self.params, "theta.dec_wd");
        let b = &self.params.value("theta.dec_b").data;
        let wda = wd.matmul(&a2);
        let mut w = DenseMatrix::zeros(self.dx, self.n1 + self.n2);
        w.set_block(0, 0, &wda);
        w.set_block(0, self.n1, &wz);
        let m: Vec<f64> = wd
            .matvec(self.c2_mu())
            .iter()
            .zip(b)
            .map(|(a, b)| a + b)
            .collect();
        (w, m)
    }

    /// Prior mean `(0, c2_mu)`.
    pub fn prior_mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.n1 + self.n2];
        mu[self.n1..].copy_from_slice(self.c2_mu());
        mu
    }

    /// Prior covariance: block matrix with identity top-left, `A2^T` /
    /// `A2` off-diagonal blocks, and `A2 A2^T + diag(sigma_z2^2)`
    /// bottom-right.
    pub fn prior_cov(&self) -> DenseMatrix {
        let a2 = self.a2();
        let mut cov = DenseMatrix::zeros(self.n1 + self.n2, self.n1 + self.n2);
        cov.set_block(0, 0, &DenseMatrix::identity(self.n1));
        cov.set_block(0, self.n1, &a2.transpose());
        cov.set_block(self.n1, 0, &a2);
        let mut br = a2.matmul(&a2.transpose());
        for (i, s) in self.log_sigma_z2().iter().enumerate() {
            br[(i, i)] += (2.0 * s).exp();
        }
        cov.set_block(self.n1, self.n1, &br);
        cov
    }

    /// Exact Gaussian marginal `(mu_x, Sigma_x)` of the data, derived from
    /// the decoder pipeline: `mu_x = b + (Wz + Wd) c2_mu` and
    /// `Sigma_x = W Sigma_z W^T + diag(sigma_x^2)`.
    pub fn marginal_moments(&self) -> (Vec<f64>, DenseMatrix) {
        let (w, m) = self.combined_obs_map();
        let mu_z = self.prior_mean();
        let mu_x: Vec<f64> = w.matvec(&mu_z).iter().zip(&m).map(|(a, b)| a + b).collect();
        let sz = self.prior_cov();
        let mut sx = w.matmul(&sz.matmul(&w.transpose()));
        for (i, s) in self.obs_log_sigma().iter().enumerate() {
            sx[(i, i)] += (2.0 * s).exp();
        }
        (mu_x, sx.symmetrized())
    }

    /// Exact Gaussian conditioning: posterior mean (linear in `x`) and the
    /// `x`-independent posterior covariance
    /// `Sigma_z - (W Sigma_z)^T Sigma_x^{-1} W Sigma_z`.
    pub fn posterior_moments(&self, x: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let (w, _m) = self.combined_obs_map();
        let (mu_x, sx) = self.marginal_moments();
        let sz = self.prior_cov();
        let wsz = w.matmul(&sz); // dx x dz
        let lx = cholesky(&sx).expect("marginal covariance must be SPD");

        // Sigma_x^{-1} (W Sigma_z): solve column by column.
        let dz = self.n1 + self.n2;
        let mut sx_inv_wsz = DenseMatrix::zeros(self.dx, dz);
        for j in 0..dz {
            let col: Vec<f64> = (0..self.dx).map(|i| wsz[(i, j)]).collect();
            let y = lx.solve_lower(&col);
            let s = lx.solve_upper_tr(&y);
            for i in 0..self.dx {
                sx_inv_wsz[(i, j)] = s[i];
            }
        }
        let correction = wsz.transpose().matmul(&sx_inv_wsz);
        let cov = sz.sub(&correction).symmetrized();

        let resid: Vec<f64> = x.iter().zip(&mu_x).map(|(a, b)| a - b).collect();
        let y = lx.solve_lower(&resid);
        let s = lx.solve_upper_tr(&y);
        let gain = wsz.tr_matvec(&s); // Sigma_z W^T Sigma_x^{-1} (x - mu_x)
        let mean: Vec<f64> = self
            .prior_mean()
            .iter()
            .zip(&gain)
            .map(|(a, b)| a + b)
            .collect();
        (mean, cov)
    }

    /// Posterior precision in information form,
    /// `W^T D^{-1} W + Sigma_z^{-1}`; equals the inverse of the
    /// conditioning-form covariance (two algebraic routes, pinned by
    /// tests).
    pub fn posterior_precision(&self) -> DenseMatrix {
        let (w, _) = self.combined_obs_map();
        let dz = self.n1 + self.n2;
        let inv_obs_var: Vec<f64> = self.obs_log_sigma().iter().map(|s| (-2.0 * s).exp()).collect();
        let mut prec = DenseMatrix::zeros(dz, dz);
        // W^T D^{-1} W
        for r in 0..self.dx {
            let row = w.row(r).to_vec();
            let scale = inv_obs_var[r];
            for i in 0..dz {
                if row[i] == 0.0 {
                    continue;
                }
                let f = scale * row[i];
                for j in 0..dz {
                    prec[(i, j)] += f * row[j];
                }
            }
        }
        // + Sigma_z^{-1}
        let lz = cholesky(&self.prior_cov()).expect("prior covariance must be SPD");
        let mut e = vec![0.0; dz];
        for j in 0..dz {
            e[j] = 1.0;
            let y = lz.solve_lower(&e);
            let col = lz.solve_upper_tr(&y);
            for i in 0..dz {
                prec[(i, j)] += col[i];
            }
            e[j] = 0.0;
        }
        prec.symmetrized()
    }

    /// Exact log-evidence `log N(x; mu_x, Sigma_x)`.
    pub fn marginal_loglik(&self, x: &[f64]) -> f64 {
        let (mu_x, sx) = self.marginal_moments();
        let lx = cholesky(&sx).expect("marginal covariance must be SPD");
        gaussian_logpdf(x, &mu_x, &lx).expect("dimension checked on entry")
    }

    /// Mean log-evidence over a dataset, factorizing the marginal once.
    pub fn mean_marginal_loglik(&self, data: &[Vec<f64>]) -> f64 {
        let (mu_x, sx) = self.marginal_moments();
        let lx = cholesky(&sx).expect("marginal covariance must be SPD");
        let total: f64 = data
            .iter()
            .map(|x| gaussian_logpdf(x, &mu_x, &lx).expect("dimension checked"))
            .sum();
        total / data.len() as f64
    }

    pub fn log_prior(&self, z: &[f64]) -> f64 {
        let z1 = &z[..self.n1];
        let z2 = &z[self.n1..];
        let mut lp = -0.5 * z1.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.n1 as f64 * LN_2PI;
        let mean2: Vec<f64> = self
            .a2()
            .matvec(z1)
            .iter()
            .zip(self.c2_mu())
            .map(|(a, b)| a + b)
            .collect();
        lp += diag_gaussian_logpdf(z2, &mean2, self.log_sigma_z2());
        lp
    }

    pub fn log_lik(&self, x: &[f64], z: &[f64]) -> f64 {
        let (w, m) = self.combined_obs_map();
        let mean: Vec<f64> = w.matvec(z).iter().zip(&m).map(|(a, b)| a + b).collect();
        diag_gaussian_logpdf(x, &mean, self.obs_log_sigma())
    }

    /// Ancestral draw of one observation.
    pub fn sample_observation(&self, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let ps = self.prior_sample(rng);
        let z = ps.flattened();
        let (w, m) = self.combined_obs_map();
        let mean: Vec<f64> = w.matvec(&z).iter().zip(&m).map(|(a, b)| a + b).collect();
        let x: Vec<f64> = mean
            .iter()
            .zip(self.obs_log_sigma())
            .map(|(mu, s)| mu + s.exp() * rng.standard_normal())
            .collect();
        (z, x)
    }

    /// Exact joint Gaussian moments of the encoder distribution
    /// `q0(z | x)` (the residual encoder is linear, so the two layers are
    /// jointly Gaussian).
    pub fn encoder_joint_moments(&self, x: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let (n1, n2) = (self.n1, self.n2);
        let enc_w2 = tensor_as_matrix(&self.params, "phi0.enc_w2");
        let enc_w1 = tensor_as_matrix(&self.params, "phi0.enc_w1");
        let d2e: Vec<f64> = enc_w2
            .matvec(x)
            .iter()
            .zip(&self.params.value("phi0.enc_b2").data)
            .map(|(a, b)| a + b)
            .collect();
        let d1e: Vec<f64> = enc_w1
            .matvec(&d2e)
            .iter()
            .zip(&self.params.value("phi0.enc_b1").data)
            .map(|(a, b)| a + b)
            .collect();

        // Layer 1: z1 = mu1' + sigma1' eps (prior read-outs are identity).
        let read_w1 = tensor_as_matrix(&self.params, "phi0.read_w1");
        let mut in1 = vec![0.0; 3 * n1];
        in1[2 * n1..].copy_from_slice(&d1e);
        let m1: Vec<f64> = read_w1
            .matvec(&in1)
            .iter()
            .zip(&self.params.value("phi0.read_b1").data)
            .map(|(a, b)| a + b)
            .collect();
        let s1: Vec<f64> = self.params.value("phi0.log_scale1").data
            .iter()
            .map(|v| v.exp())
            .collect();

        // Layer 2: z2 = F z1 + g + diag(sigma_theta2 sigma2') eps.
        let a2 = self.a2();
        let sigma_theta2: Vec<f64> = self.log_sigma_z2().iter().map(|v| v.exp()).collect();
        let read_w2 = tensor_as_matrix(&self.params, "phi0.read_w2");
        // Split read_w2 columns: [d2_mu | d2_sigma | d'2].
        let r_mu = DenseMatrix::from_fn(n2, n2, |i, j| read_w2[(i, j)]);
        let r_sig = DenseMatrix::from_fn(n2, n2, |i, j| read_w2[(i, n2 + j)]);
        let r_enc = DenseMatrix::from_fn(n2, n2, |i, j| read_w2[(i, 2 * n2 + j)]);
        let c2_sigma: Vec<f64> = self.log_sigma_z2().iter().map(|v| 2.0 * v).collect();

        // F = A2 + diag(sigma_theta2) R_mu A2
        let rmu_a2 = r_mu.matmul(&a2);
        let f = DenseMatrix::from_fn(n2, n1, |i, j| a2[(i, j)] + sigma_theta2[i] * rmu_a2[(i, j)]);
        // g = c2_mu + sigma_theta2 .* (R_mu c2_mu + R_sig c2_sigma + R_enc d'2 + read_b2)
        let mut resid: Vec<f64> = r_mu.matvec(self.c2_mu());
        for (r, v) in resid.iter_mut().zip(r_sig.matvec(&c2_sigma)) {
            *r += v;
        }
        for (r, v) in resid.iter_mut().zip(r_enc.matvec(&d2e)) {
            *r += v;
        }
        for (r, v) in resid
            .iter_mut()
            .zip(&self.params.value("phi0.read_b2").data)
        {
            *r += v;
        }
        let g: Vec<f64> = self
            .c2_mu()
            .iter()
            .zip(sigma_theta2.iter().zip(&resid))
            .map(|(c, (s, r))| c + s * r)
            .collect();
        let s2: Vec<f64> = self.params.value("phi0.log_scale2").data
            .iter()
            .zip(&sigma_theta2)
            .map(|(v, st)| v.exp() * st)
            .collect();

        let dz = n1 + n2;
        let mut mean = vec![0.0; dz];
        mean[..n1].copy_from_slice(&m1);
        let fm1 = f.matvec(&m1);
        for i in 0..n2 {
            mean[n1 + i] = fm1[i] + g[i];
        }
        let mut cov = DenseMatrix::zeros(dz, dz);
        for i in 0..n1 {
            cov[(i, i)] = s1[i] * s1[i];
        }
        // Sigma1 F^T and F Sigma1
        for i in 0..n1 {
            for j in 0..n2 {
                let v = s1[i] * s1[i] * f[(j, i)];
                cov[(i, n1 + j)] = v;
                cov[(n1 + j, i)] = v;
            }
        }
        // F Sigma1 F^T + diag(s2^2)
        for i in 0..n2 {
            for j in 0..n2 {
                let mut v = 0.0;
                for k in 0..n1 {
                    v += f[(i, k)] * s1[k] * s1[k] * f[(j, k)];
                }
                if i == j {
                    v += s2[i] * s2[i];
                }
                cov[(n1 + i, n1 + j)] = v;
            }
        }
        (mean, cov)
    }

    /// Exact per-observation ELBO (closed form for the linear model):
    /// `E_q[log p(x|z)] - KL(q0 || prior)`.
    pub fn exact_elbo(&self, x: &[f64]) -> f64 {
        let (mq, sq) = self.encoder_joint_moments(x);
        let (w, m) = self.combined_obs_map();
        let mean_x: Vec<f64> = w.matvec(&mq).iter().zip(&m).map(|(a, b)| a + b).collect();
        let inv_var: Vec<f64> = self.obs_log_sigma().iter().map(|s| (-2.0 * s).exp()).collect();
        let mut expected_loglik = 0.0;
        for i in 0..self.dx {
            let r = x[i] - mean_x[i];
            expected_loglik += -0.5 * inv_var[i] * r * r;
        }
        // -1/2 tr(D^{-1} W Sigma_q W^T)
        let wsq = w.matmul(&sq.matmul(&w.transpose()));
        for i in 0..self.dx {
            expected_loglik -= 0.5 * inv_var[i] * wsq[(i, i)];
        }
        expected_loglik -=
            self.obs_log_sigma().iter().sum::<f64>() + 0.5 * self.dx as f64 * LN_2PI;

        let kl = crate::numerics::kl_gaussians(&mq, &sq, &self.prior_mean(), &self.prior_cov())
            .expect("encoder and prior covariances are SPD");
        expected_loglik - kl
    }

    /// Residual read-outs of layer `layer` (1-based) at deterministic
    /// variables `(d_l, d_enc_l)`, then the closed-form KL.
    pub fn layer_kl(&self, layer: usize, d_l: &[f64], d_enc_l: &[f64]) -> f64 {
        let (read_w, read_b, log_scale, n) = match layer {
            1 => ("phi0.read_w1", "phi0.read_b1", "phi0.log_scale1", self.n1),
            2 => ("phi0.read_w2", "phi0.read_b2", "phi0.log_scale2", self.n2),
            _ => panic!("layer must be 1 or 2"),
        };
        assert_eq!(d_l.len(), 2 * n);
        assert_eq!(d_enc_l.len(), n);
        let w = tensor_as_matrix(&self.params, read_w);
        let mut input = Vec::with_capacity(3 * n);
        input.extend_from_slice(d_l);
        input.extend_from_slice(d_enc_l);
        let mu: Vec<f64> = w
            .matvec(&input)
            .iter()
            .zip(&self.params.value(read_b).data)
            .map(|(a, b)| a + b)
            .collect();
        let sigma: Vec<f64> = self.params.value(log_scale).data
            .iter()
            .map(|v| v.exp())
            .collect();
        layer_kl_closed_form(&mu, &sigma)
    }

    /// Encoder graph shared by the ELBO and by standalone sampling:
    /// returns per-layer latent nodes plus the KL node.
    fn encoder_graph(
        &self,
        tape: &mut Tape,
        x: &[f64],
        eps: &[f64],
    ) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let (n1, n2) = (self.n1, self.n2);
        assert_eq!(eps.len(), n1 + n2);
        let xc = tape.constant_vector(x);

        let enc_w2 = tape.param(&self.params, "phi0.enc_w2");
        let enc_b2 = tape.param(&self.params, "phi0.enc_b2");
        let d2e = tape.affine(enc_w2, xc, enc_b2)?;
        let enc_w1 = tape.param(&self.params, "phi0.enc_w1");
        let enc_b1 = tape.param(&self.params, "phi0.enc_b1");
        let d1e = tape.affine(enc_w1, d2e, enc_b1)?;

        // Layer 1 (prior read-outs are the identity: mu = 0, sigma = 1).
        let d1 = tape.constant_vector(&vec![0.0; 2 * n1]);
        let in1 = tape.concat(d1, d1e)?;
        let read_w1 = tape.param(&self.params, "phi0.read_w1");
        let read_b1 = tape.param(&self.params, "phi0.read_b1");
        let mu1 = tape.affine(read_w1, in1, read_b1)?;
        let ls1 = tape.param(&self.params, "phi0.log_scale1");
        let sigma1 = tape.exp(ls1);
        let eps1 = tape.constant_vector(&eps[..n1]);
        let z1 = tape.scale_shift(eps1, sigma1, mu1)?;
        let kl1 = layer_kl_node(tape, mu1, ls1)?;

        // Deterministic top-down d2 = [A2 z1 + c2_mu ; 2 log sigma_z2].
        let prior_w2 = tape.param(&self.params, "theta.prior_w2");
        let prior_b2 = tape.param(&self.params, "theta.prior_b2");
        let d2_mu = tape.affine(prior_w2, z1, prior_b2)?;
        let prior_ls2 = tape.param(&self.params, "theta.prior_log_sigma2");
        let d2_sigma = tape.scale(prior_ls2, 2.0);
        let d2 = tape.concat(d2_mu, d2_sigma)?;

        // Layer 2 residual read-outs.
        let in2 = tape.concat(d2, d2e)?;
        let read_w2 = tape.param(&self.params, "phi0.read_w2");
        let read_b2 = tape.param(&self.params, "phi0.read_b2");
        let mu2 = tape.affine(read_w2, in2, read_b2)?;
        let ls2 = tape.param(&self.params, "phi0.log_scale2");
        let sigma2 = tape.exp(ls2);
        let eps2 = tape.constant_vector(&eps[n1..]);
        let inner2 = tape.scale_shift(eps2, sigma2, mu2)?;
        let sigma_theta2 = tape.exp(prior_ls2);
        let z2 = tape.scale_shift(inner2, sigma_theta2, d2_mu)?;
        let kl2 = layer_kl_node(tape, mu2, ls2)?;

        let kl = tape.add(kl1, kl2)?;
        Ok((z1, z2, d2_mu, kl))
    }

    fn decoder_loglik_node(
        &self,
        tape: &mut Tape,
        x: &[f64],
        z1: NodeId,
        z2: NodeId,
        d2_mu: Option<NodeId>,
    ) -> Result<NodeId> {
        // d2_mu may be shared with the encoder graph; otherwise rebuild it
        // from z1 (the potential path).
        let d2_mu = match d2_mu {
            Some(n) => n,
            None => {
                let prior_w2 = tape.param(&self.params, "theta.prior_w2");
                let prior_b2 = tape.param(&self.params, "theta.prior_b2");
                tape.affine(prior_w2, z1, prior_b2)?
            }
        };
        let dec_wz = tape.param(&self.params, "theta.dec_wz");
        let dec_b = tape.param(&self.params, "theta.dec_b");
        let mean_z = tape.affine(dec_wz, z2, dec_b)?;
        let dec_wd = tape.param(&self.params, "theta.dec_wd");
        let mean_d = tape.matmul(dec_wd, d2_mu)?;
        let mean = tape.add(mean_z, mean_d)?;
        let obs_ls = tape.param(&self.params, "theta.obs_log_sigma");
        super::common::gaussian_loglik_node_trainable(tape, x, mean, obs_ls)
    }

    /// Prior log-density graph at latent nodes (used by the potential and
    /// the generative-gradient hook).
    fn prior_loglik_node(&self, tape: &mut Tape, z1: NodeId, z2: NodeId) -> Result<NodeId> {
        let n1 = self.n1;
        // log N(z1; 0, I)
        let sq1 = tape.square(z1);
        let s1 = tape.sum(sq1);
        let half1 = tape.scale(s1, -0.5);
        let lp1 = tape.add_const(half1, -0.5 * n1 as f64 * LN_2PI);
        // log N(z2; A2 z1 + c2_mu, diag(sigma_z2^2))
        let prior_w2 = tape.param(&self.params, "theta.prior_w2");
        let prior_b2 = tape.param(&self.params, "theta.prior_b2");
        let mu2 = tape.affine(prior_w2, z1, prior_b2)?;
        let prior_ls2 = tape.param(&self.params, "theta.prior_log_sigma2");
        let diff = tape.sub(z2, mu2)?;
        let neg_ls = tape.scale(prior_ls2, -1.0);
        let inv_sigma = tape.exp(neg_ls);
        let scaled = tape.mul(diff, inv_sigma)?;
        let sq2 = tape.square(scaled);
        let q2 = tape.sum(sq2);
        let half2 = tape.scale(q2, -0.5);
        let ls_sum = tape.sum(prior_ls2);
        let neg_ls_sum = tape.scale(ls_sum, -1.0);
        let partial = tape.add(half2, neg_ls_sum)?;
        let lp2 = tape.add_const(partial, -0.5 * self.n2 as f64 * LN_2PI);
        tape.add(lp1, lp2)
    }
}

impl LatentModel for LinearHvae {
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
        let (z1, z2, d2_mu, kl) = self.encoder_graph(tape, x, eps)?;
        let recon = self.decoder_loglik_node(tape, x, z1, z2, Some(d2_mu))?;
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
        let (mean, cov) = self.encoder_joint_moments(x);
        // Conditional scales along the mean path: layer-1 scales and the
        // layer-2 conditional (not marginal) standard deviations.
        let mut scales = vec![0.0; self.n1 + self.n2];
        for i in 0..self.n1 {
            scales[i] = self.params.value("phi0.log_scale1").data[i].exp();
        }
        let sigma_theta2: Vec<f64> = self.log_sigma_z2().iter().map(|v| v.exp()).collect();
        for i in 0..self.n2 {
            scales[self.n1 + i] =
                self.params.value("phi0.log_scale2").data[i].exp() * sigma_theta2[i];
        }
        let _ = cov;
        (mean, scales)
    }

    fn posterior_potential(&self, x: &[f64]) -> Result<Box<dyn Potential + '_>> {
        Ok(Box::new(LinearPosteriorPotential::new(self, x)))
    }

    fn log_joint(&self, x: &[f64], z: &[f64]) -> f64 {
        self.log_lik(x, z) + self.log_prior(z)
    }

    fn theta_grad(&self, x: &[f64], z: &[f64]) -> ThetaGrad {
        let mut tape = Tape::new();
        let z1 = tape.constant_vector(&z[..self.n1]);
        let z2 = tape.constant_vector(&z[self.n1..]);
        let lp = self
            .prior_loglik_node(&mut tape, z1, z2)
            .expect("prior graph shapes are fixed");
        let ll = self
            .decoder_loglik_node(&mut tape, x, z1, z2, None)
            .expect("decoder graph shapes are fixed");
        let joint = tape.add(lp, ll).expect("scalar add");
        let grads = tape.backward(joint).expect("scalar output");
        let mut out = Vec::new();
        let mut sink = ParamStore::new();
        for name in self.params.names_with_prefix("theta.") {
            sink.insert(name, Tensor::zeros(self.params.value(name).shape));
        }
        tape.accumulate_params(&grads, &mut sink, 1.0);
        for name in self.params.names_with_prefix("theta.") {
            out.push((name.to_string(), sink.grad(name).clone()));
        }
        out
    }

    fn prior_sample(&self, rng: &mut RngStream) -> PriorSample {
        let z1: Vec<f64> = (0..self.n1).map(|_| rng.standard_normal()).collect();
        let mu2: Vec<f64> = self
            .a2()
            .matvec(&z1)
            .iter()
            .zip(self.c2_mu())
            .map(|(a, b)| a + b)
            .collect();
        let z2: Vec<f64> = mu2
            .iter()
            .zip(self.log_sigma_z2())
            .map(|(m, s)| m + s.exp() * rng.standard_normal())
            .collect();
        let d1 = vec![0.0; 2 * self.n1];
        let mut d2 = mu2.clone();
        d2.extend(self.log_sigma_z2().iter().map(|s| 2.0 * s));
        PriorSample {
            z: vec![z1, z2],
            d: vec![d1, d2],
        }
    }

    fn prior_param_names(&self) -> Vec<String> {
        vec![
            "theta.prior_w2".into(),
            "theta.prior_b2".into(),
            "theta.prior_log_sigma2".into(),
        ]
    }

    fn checkpoint_meta(&self) -> String {
        format!("kind=linear-hvae n1={} n2={} dx={}", self.n1, self.n2, self.dx)
    }

    fn as_linear(&self) -> Option<&LinearHvae> {
        Some(self)
    }
}

/// Quadratic posterior potential of the linear model: constant Hessian
/// `W^T D^{-1} W + Sigma_z^{-1}`, exact value via the two Gaussian
/// log-densities.
struct LinearPosteriorPotential<'a> {
    model: &'a LinearHvae,
    x: Vec<f64>,
    precision: DenseMatrix,
    /// `grad U(z) = precision * z - lin`.
    lin: Vec<f64>,
    w: DenseMatrix,
    obs_offset: Vec<f64>,
    prior_chol: LowerTriangularFactor,
    prior_mean: Vec<f64>,
}

impl<'a> LinearPosteriorPotential<'a> {
    fn new(model: &'a LinearHvae, x: &[f64]) -> Self {
        let (w, m) = model.combined_obs_map();
        let precision = model.posterior_precision();
        let prior_cov = model.prior_cov();
        let prior_chol = cholesky(&prior_cov).expect("prior covariance must be SPD");
        let prior_mean = model.prior_mean();

        // lin = W^T D^{-1} (x - m) + Sigma_z^{-1} mu_z
        let inv_var: Vec<f64> = model
            .obs_log_sigma()
            .iter()
            .map(|s| (-2.0 * s).exp())
            .collect();
        let resid: Vec<f64> = x
            .iter()
            .zip(&m)
            .zip(&inv_var)
            .map(|((x, m), iv)| (x - m) * iv)
            .collect();
        let mut lin = w.tr_matvec(&resid);
        let y = prior_chol.solve_lower(&prior_mean);
        let sz_inv_mu = prior_chol.solve_upper_tr(&y);
        for (l, v) in lin.iter_mut().zip(&sz_inv_mu) {
            *l += v;
        }
        LinearPosteriorPotential {
            model,
            x: x.to_vec(),
            precision,
            lin,
            w,
            obs_offset: m,
            prior_chol,
            prior_mean,
        }
    }
}

impl Potential for LinearPosteriorPotential<'_> {
    fn dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let mean: Vec<f64> = self
            .w
            .matvec(z)
            .iter()
            .zip(&self.obs_offset)
            .map(|(a, b)| a + b)
            .collect();
        let loglik = diag_gaussian_logpdf(&self.x, &mean, self.model.obs_log_sigma());
        let diff: Vec<f64> = z.iter().zip(&self.prior_mean).map(|(a, b)| a - b).collect();
        let wvec = self.prior_chol.solve_lower(&diff);
        let log_prior = -0.5 * wvec.iter().map(|v| v * v).sum::<f64>()
            - self.prior_chol.log_det()
            - 0.5 * self.dim() as f64 * LN_2PI;
        -(loglik + log_prior)
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        self.precision
            .matvec(z)
            .iter()
            .zip(&self.lin)
            .map(|(a, b)| a - b)
            .collect()
    }

    fn hvp(&self, _z: &[f64], v: &[f64]) -> Vec<f64> {
        self.precision.matvec(v)
    }

    fn constant_hessian(&self) -> Option<&DenseMatrix> {
        Some(&self.precision)
    }

    fn theta_grad(&self, z: &[f64]) -> ThetaGrad {
        self.model.theta_grad(&self.x, z)
    }
}
