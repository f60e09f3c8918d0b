/// Dual-averaging step-size adaptation (the baseline adapter).
///
/// Tracks a running discrepancy between the target and observed acceptance
/// and shrinks the log step toward `mu = log(10 h0)`, averaging the
/// iterates with polynomially decaying weights:
///
/// ```text
/// w        = 1 / (t + t0)
/// h_bar    = (1 - w) h_bar + w (alpha_star - observed)
/// log h    = mu - sqrt(t) h_bar / gamma
/// m        = t^{-kappa}
/// log h_av = m log h + (1 - m) log h_av
/// ```
///
/// The noisy iterate `log_h` drives sampling during adaptation; the
/// averaged `log_h_avg` is the converged estimate. A single scalar step is
/// adapted, so a preconditioner's shape is left untouched.
#[derive(Debug, Clone)]
pub struct DualAveragingState {
    /// Shrinkage target, `log(10 h0)`.
    pub mu: f64,
    /// Current (noisy) log step size.
    pub log_h: f64,
    /// Polynomially averaged log step size.
    pub log_h_avg: f64,
    /// Running acceptance discrepancy statistic.
    pub h_bar: f64,
    /// Iteration counter, strictly increasing from 1.
    pub iteration: u64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
}

impl DualAveragingState {
    /// Defaults `gamma = 0.05`, `t0 = 10`, `kappa = 0.75`.
    pub fn new(initial_step: f64) -> Self {
        DualAveragingState {
            mu: (10.0 * initial_step).ln(),
            log_h: initial_step.ln(),
            log_h_avg: initial_step.ln(),
            h_bar: 0.0,
            iteration: 1,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    /// One update from an observed acceptance statistic in [0, 1].
    pub fn advance(&mut self, observed_accept: f64, alpha_star: f64) {
        debug_assert!((0.0..=1.0).contains(&observed_accept));
        let t = self.iteration as f64;
        let w = 1.0 / (t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (alpha_star - observed_accept);
        self.log_h = self.mu - t.sqrt() * self.h_bar / self.gamma;
        let m = t.powf(-self.kappa);
        self.log_h_avg = m * self.log_h + (1.0 - m) * self.log_h_avg;
        self.iteration += 1;
    }

    pub fn current_step(&self) -> f64 {
        self.log_h.exp()
    }

    pub fn averaged_step(&self) -> f64 {
        self.log_h_avg.exp()
    }
}

/// Free-function form of [`DualAveragingState::advance`], returning the
/// updated state.
pub fn dual_averaging_update(
    mut s: DualAveragingState,
    observed_accept: f64,
    alpha_star: f64,
) -> DualAveragingState {
    s.advance(observed_accept, alpha_star);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{mh_step, KernelParams};
    use crate::numerics::RngStream;
    use crate::targets::GaussianPotential;

    #[test]
    fn on_target_acceptance_is_a_fixed_point() {
        let mut s = DualAveragingState::new(0.3);
        let mut prev = s.log_h;
        let mut last_change = f64::INFINITY;
        for _ in 0..1000 {
            s.advance(0.574, 0.574);
            last_change = (s.log_h - prev).abs();
            prev = s.log_h;
        }
        assert!(last_change <= 1e-3, "log h still moving by {last_change}");
        // h_bar never leaves zero, so log h stays at mu exactly.
        assert!((s.log_h - s.mu).abs() < 1e-12);
    }

    #[test]
    fn persistent_rejection_shrinks_step_monotonically() {
        let mut s = DualAveragingState::new(0.5);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            s.advance(0.0, 0.574);
            assert!(s.log_h < prev);
            prev = s.log_h;
        }
    }

    #[test]
    fn converges_to_target_band_on_standard_normal() {
        // Self-consistency: run MALA with the adapted (noisy) step on a
        // standard normal; the trailing average acceptance should bracket
        // the 0.574 target.
        let dim = 2;
        let pot = GaussianPotential::standard(dim);
        let mut k = KernelParams::mala(dim);
        let mut s = DualAveragingState::new(k.step_size());
        let mut rng = RngStream::new(70, 0);
        let mut z = vec![0.0; dim];
        let steps = 10_000usize;
        let mut tail_accepts = 0usize;
        let tail_start = steps / 2;
        for step in 0..steps {
            k.log_h = s.log_h;
            let out = mh_step(&z, &pot, &k, &mut rng).unwrap();
            z = out.next_state;
            s.advance(out.log_alpha.exp().min(1.0), 0.574);
            if step >= tail_start && out.accepted {
                tail_accepts += 1;
            }
        }
        let rate = tail_accepts as f64 / (steps - tail_start) as f64;
        assert!(
            (0.52..=0.63).contains(&rate),
            "trailing acceptance {rate} outside [0.52, 0.63]"
        );
    }
}
