//! Reparameterizable Metropolis-Hastings kernels and their adaptation.
//!
//! Two kernels share one interface: MALA (a preconditioned Langevin
//! proposal with step size `h` and nonsingular matrix `C`) and HMC (a
//! leapfrog integrator whose step size is absorbed into `C`, so that the
//! inverse mass matrix is `C C^T`). Both accept with probability
//! `exp(min(0, -delta))` where `delta` is the energy error of the move.
//!
//! Adaptation maximizes a speed measure: the expected log-acceptance plus
//! `beta` times the proposal entropy. The pathwise gradient of
//! `log alpha - beta log r` with respect to the proposal parameters is
//! computed in closed form (MALA) or by an adjoint pass through the
//! leapfrog trajectory (HMC), with Hessian-vector products supplying the
//! curvature terms. `beta` itself is steered by a multiplicative
//! controller toward a target acceptance rate. A dual-averaging scheme on
//! the step size alone is provided as the baseline adapter.

mod dual;
mod hmc;
mod mala;
mod mh;
mod params;
mod speed;

pub use dual::{dual_averaging_update, DualAveragingState};
pub use hmc::{
    hmc_energy_error, hmc_entropy_approx, hmc_leapfrog, hmc_log_r_realized,
    leapfrog_jacobian_quadratic, LeapfrogTrajectory,
};
pub use mala::{mala_energy_error, mala_entropy, mala_log_proposal_density, mala_propose};
pub use mh::{mh_step, ChainRecord, KernelOutput};
pub use params::{KernelKind, KernelParams, Preconditioner};
pub use speed::{beta_update, speed_measure_grad_contrib, Phi1Grad};
