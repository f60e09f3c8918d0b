use super::hmc::{hmc_energy_error, hmc_leapfrog, hmc_log_r_realized};
use super::mala::{mala_energy_error, mala_log_proposal_density, mala_propose};
use super::params::{KernelKind, KernelParams};
use crate::numerics::{sample_standard_normal, RngStream};
use crate::targets::Potential;
use crate::{Error, Result};

/// Everything one Metropolis-Hastings step produces.
#[derive(Debug, Clone)]
pub struct KernelOutput {
    pub next_state: Vec<f64>,
    pub proposed_state: Vec<f64>,
    pub accepted: bool,
    /// `min(0, -delta)`; `-inf` for divergent proposals.
    pub log_alpha: f64,
    /// Log proposal density of the realized proposal (the local-Gaussian
    /// approximation for HMC).
    pub log_r_forward: f64,
    /// Energy error `delta`.
    pub energy_error: f64,
    /// The standard-normal draw that generated the proposal; kept so the
    /// adaptation gradient can re-traverse the same path.
    pub noise: Vec<f64>,
}

/// Per-step chain diagnostics accumulated for adaptation and reporting.
#[derive(Debug, Clone)]
pub struct ChainRecord {
    pub step: usize,
    pub accepted: bool,
    pub log_alpha: f64,
    pub log_r_forward: f64,
    pub energy_error: f64,
}

impl ChainRecord {
    pub fn from_output(step: usize, out: &KernelOutput) -> Self {
        ChainRecord {
            step,
            accepted: out.accepted,
            log_alpha: out.log_alpha,
            log_r_forward: out.log_r_forward,
            energy_error: out.energy_error,
        }
    }
}

/// One reparameterized Metropolis-Hastings step: draw `v ~ N(0, I)`, build
/// the proposal, accept with probability `exp(min(0, -delta))`.
///
/// A divergent trajectory (or a non-finite energy error) is treated as a
/// rejection with `log_alpha = -inf` rather than an error; the chain stays
/// where it was.
pub fn mh_step(
    z: &[f64],
    p: &dyn Potential,
    k: &KernelParams,
    rng: &mut RngStream,
) -> Result<KernelOutput> {
    if !z.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let dim = p.dim();
    let v = sample_standard_normal(dim, rng);
    let u = rng.uniform();

    let (proposed, delta, log_r) = match k.kind {
        KernelKind::Mala => match mala_propose(z, &v, p, k) {
            Ok(z2) if z2.iter().all(|x| x.is_finite()) => {
                let delta = mala_energy_error(z, &z2, &v, p, k).unwrap_or(f64::INFINITY);
                let log_r =
                    mala_log_proposal_density(z, &z2, p, k).unwrap_or(f64::NEG_INFINITY);
                (z2, delta, log_r)
            }
            _ => (z.to_vec(), f64::INFINITY, f64::NEG_INFINITY),
        },
        KernelKind::Hmc => match hmc_leapfrog(z, &v, p, k) {
            Ok(traj) => {
                let delta = hmc_energy_error(
                    z,
                    traj.proposed(),
                    traj.initial_momentum(),
                    traj.final_momentum(),
                    p,
                    k,
                );
                let log_r =
                    hmc_log_r_realized(k, &v, traj.midpoint(), p).unwrap_or(f64::NEG_INFINITY);
                (traj.proposed().to_vec(), delta, log_r)
            }
            Err(Error::DivergentTrajectory) => (z.to_vec(), f64::INFINITY, f64::NEG_INFINITY),
            Err(e) => return Err(e),
        },
    };

    let log_alpha = if delta.is_nan() {
        f64::NEG_INFINITY
    } else {
        (-delta).min(0.0)
    };
    let accepted = u.ln() < log_alpha;
    let next_state = if accepted {
        proposed.clone()
    } else {
        z.to_vec()
    };
    Ok(KernelOutput {
        next_state,
        proposed_state: proposed,
        accepted,
        log_alpha,
        log_r_forward: log_r,
        energy_error: delta,
        noise: v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::params::Preconditioner;
    use crate::numerics::{cholesky, DenseMatrix};
    use crate::targets::GaussianPotential;

    #[test]
    fn downhill_tiny_step_always_accepts() {
        // From a point far up a quadratic bowl with a tiny step, the drift
        // dominates and delta < 0: acceptance probability 1.
        let pot = GaussianPotential::standard(2);
        let mut k = KernelParams::mala(2);
        k.log_h = (1e-3f64).ln();
        let mut rng = RngStream::new(50, 0);
        let z = [8.0, -8.0];
        for _ in 0..50 {
            let out = mh_step(&z, &pot, &k, &mut rng).unwrap();
            assert!(out.accepted, "delta {}", out.energy_error);
            assert_eq!(out.next_state, out.proposed_state);
        }
    }

    #[test]
    fn rejection_keeps_state() {
        let pot = GaussianPotential::standard(1);
        let mut k = KernelParams::mala(1);
        k.log_h = (2.5f64).ln(); // aggressive step, frequent rejections
        let mut rng = RngStream::new(51, 0);
        let mut saw_reject = false;
        let z = [0.1];
        for _ in 0..100 {
            let out = mh_step(&z, &pot, &k, &mut rng).unwrap();
            if !out.accepted {
                saw_reject = true;
                assert_eq!(out.next_state, z.to_vec());
                assert!(out.log_alpha < 0.0);
            }
        }
        assert!(saw_reject);
    }

    /// Straightforward standalone MALA on a standard normal, written
    /// independently of the kernel plumbing, for acceptance-rate bands.
    fn reference_mala_acceptance(h: f64, steps: usize, rng: &mut RngStream) -> (f64, f64) {
        let mut z = 0.0f64;
        let mut accepts = Vec::with_capacity(steps);
        for _ in 0..steps {
            let v: f64 = rng.standard_normal();
            let u: f64 = rng.uniform();
            let zp = z - 0.5 * h * h * z + h * v;
            // delta for the 1d standard normal
            let w = v - 0.5 * h * (z + zp);
            let delta = 0.5 * zp * zp - 0.5 * z * z - 0.5 * v * v + 0.5 * w * w;
            let acc = u.ln() < (-delta).min(0.0);
            if acc {
                z = zp;
            }
            accepts.push(if acc { 1.0 } else { 0.0 });
        }
        batch_mean_se(&accepts)
    }

    fn batch_mean_se(xs: &[f64]) -> (f64, f64) {
        let n_batches = 100;
        let bs = xs.len() / n_batches;
        let means: Vec<f64> = (0..n_batches)
            .map(|b| xs[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64)
            .collect();
        let m = means.iter().sum::<f64>() / n_batches as f64;
        let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n_batches - 1) as f64;
        (m, (var / n_batches as f64).sqrt())
    }

    #[test]
    fn acceptance_rate_matches_reference_chain() {
        let pot = GaussianPotential::standard(1);
        let mut k = KernelParams::mala(1);
        k.log_h = (0.5f64).ln();
        let steps = 100_000usize;

        let mut rng = RngStream::new(52, 1);
        let mut z = vec![0.0];
        let mut accepts = Vec::with_capacity(steps);
        for _ in 0..steps {
            let out = mh_step(&z, &pot, &k, &mut rng).unwrap();
            accepts.push(if out.accepted { 1.0 } else { 0.0 });
            z = out.next_state;
        }
        let (p_impl, se_impl) = batch_mean_se(&accepts);

        let mut rng_ref = RngStream::new(52, 2);
        let (p_ref, se_ref) = reference_mala_acceptance(0.5, steps, &mut rng_ref);

        let band = 3.0 * (se_impl * se_impl + se_ref * se_ref).sqrt();
        assert!(
            (p_impl - p_ref).abs() <= band,
            "impl {p_impl} vs reference {p_ref} (band {band})"
        );
    }

    #[test]
    fn stationarity_from_exact_start() {
        // Independent chains started at exact target draws stay
        // target-distributed; final-state moments match to 3 SE.
        let rng = RngStream::new(53, 0);
        let a = DenseMatrix::from_rows(&[vec![1.3, 0.4], vec![0.4, 0.9]]);
        let pot = GaussianPotential::new(vec![0.5, -0.25], a.clone());
        let cov = crate::numerics::LuFactors::new(&a, 1e-14)
            .unwrap()
            .inverse()
            .symmetrized();
        let lcov = cholesky(&cov).unwrap();

        for kind in [KernelKind::Mala, KernelKind::Hmc] {
            let mut k = match kind {
                KernelKind::Mala => {
                    let mut k = KernelParams::mala(2);
                    k.log_h = (0.6f64).ln();
                    k
                }
                KernelKind::Hmc => KernelParams::hmc(2, 3),
            };
            if let Preconditioner::Diagonal(s) = &mut k.precond {
                s.iter_mut().for_each(|v| *v = (0.5f64).ln());
            }
            let chains = 2000usize;
            let steps = 5usize;
            let mut finals = Vec::with_capacity(chains);
            for c in 0..chains {
                let mut crng = rng.derive(c as u64);
                let eps = sample_standard_normal(2, &mut crng);
                let mut z: Vec<f64> = lcov
                    .matvec(&eps)
                    .iter()
                    .zip(pot.mean())
                    .map(|(a, b)| a + b)
                    .collect();
                for _ in 0..steps {
                    z = mh_step(&z, &pot, &k, &mut crng).unwrap().next_state;
                }
                finals.push(z);
            }
            for d in 0..2 {
                let mean: f64 = finals.iter().map(|z| z[d]).sum::<f64>() / chains as f64;
                let var: f64 = finals
                    .iter()
                    .map(|z| (z[d] - mean) * (z[d] - mean))
                    .sum::<f64>()
                    / (chains - 1) as f64;
                let se_mean = (cov[(d, d)] / chains as f64).sqrt();
                assert!(
                    (mean - pot.mean()[d]).abs() <= 3.0 * se_mean,
                    "{kind:?} mean[{d}] {mean} vs {}",
                    pot.mean()[d]
                );
                // SE of the sample variance of a Gaussian: sigma^2 sqrt(2/(n-1)).
                let se_var = cov[(d, d)] * (2.0 / (chains as f64 - 1.0)).sqrt();
                assert!(
                    (var - cov[(d, d)]).abs() <= 3.0 * se_var,
                    "{kind:?} var[{d}] {var} vs {}",
                    cov[(d, d)]
                );
            }
        }
    }
}
