use super::hmc::hmc_leapfrog;
use super::mh::KernelOutput;
use super::params::{KernelKind, KernelParams, Preconditioner};
use crate::numerics::{DenseMatrix, LuFactors};
use crate::targets::{assemble_hessian, Potential};
use crate::Result;

/// Gradient of the per-step speed-measure contribution with respect to the
/// stored proposal parameters: `log_h` (MALA only), the log-diagonal
/// entries of `C`, and the strictly-lower entries (lower-triangular `C`
/// only; empty otherwise).
#[derive(Debug, Clone)]
pub struct Phi1Grad {
    pub log_h: f64,
    pub diag: Vec<f64>,
    pub strict: Vec<f64>,
}

impl Phi1Grad {
    pub fn zeros_like(k: &KernelParams) -> Self {
        let (nd, ns) = match &k.precond {
            Preconditioner::Diagonal(s) => (s.len(), 0),
            Preconditioner::LowerTriangular(l) => (l.dim(), l.strict().len()),
        };
        Phi1Grad {
            log_h: 0.0,
            diag: vec![0.0; nd],
            strict: vec![0.0; ns],
        }
    }

    pub fn add_assign(&mut self, other: &Phi1Grad) {
        self.log_h += other.log_h;
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += b;
        }
        for (a, b) in self.strict.iter_mut().zip(&other.strict) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.log_h *= s;
        self.diag.iter_mut().for_each(|v| *v *= s);
        self.strict.iter_mut().for_each(|v| *v *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.log_h.is_finite()
            && self.diag.iter().all(|v| v.is_finite())
            && self.strict.iter().all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `G += a y^T`.
fn add_outer(g: &mut DenseMatrix, a: &[f64], y: &[f64]) {
    for (i, ai) in a.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            g[(i, j)] += ai * yj;
        }
    }
}

/// `G += a b^T C + b a^T C`, the gradient in `C` of `a^T C C^T b`.
fn add_cct_grad(g: &mut DenseMatrix, a: &[f64], b: &[f64], precond: &Preconditioner) {
    let ctb = precond.tr_matvec(b);
    let cta = precond.tr_matvec(a);
    add_outer(g, a, &ctb);
    add_outer(g, b, &cta);
}

/// Chains a dense gradient matrix in `C` to the stored parameterization:
/// strictly-lower entries pass through, log-diagonal entries pick up the
/// realized diagonal factor.
fn map_to_storage(gc: &DenseMatrix, precond: &Preconditioner) -> (Vec<f64>, Vec<f64>) {
    match precond {
        Preconditioner::Diagonal(s) => {
            let diag: Vec<f64> = (0..s.len()).map(|i| gc[(i, i)] * s[i].exp()).collect();
            (diag, Vec::new())
        }
        Preconditioner::LowerTriangular(l) => {
            let d = l.dim();
            let diag: Vec<f64> = (0..d).map(|i| gc[(i, i)] * l.diag(i)).collect();
            let mut strict = vec![0.0; l.strict().len()];
            let mut idx = 0;
            for i in 0..d {
                for j in 0..i {
                    strict[idx] = gc[(i, j)];
                    idx += 1;
                }
            }
            (diag, strict)
        }
    }
}

fn hessian_times(p: &dyn Potential, z: &[f64], v: &[f64]) -> Vec<f64> {
    p.hvp(z, v)
}

/// Pathwise gradient in `C` (and `log_h` for MALA) of the energy error at
/// fixed noise `v`, differentiating through the proposal map and through
/// the gradient of `U` at visited points via Hessian-vector products.
fn mala_delta_grad(
    z: &[f64],
    out: &KernelOutput,
    p: &dyn Potential,
    k: &KernelParams,
) -> (f64, DenseMatrix) {
    let d = z.len();
    let v = &out.noise;
    let z2 = &out.proposed_state;
    let h = k.step_size();
    let g = p.grad(z);
    let g2 = p.grad(z2);
    let gsum: Vec<f64> = g.iter().zip(&g2).map(|(a, b)| a + b).collect();

    // w = v - (h/2) C^T (g + g2)
    let ct_gsum = k.precond.tr_matvec(&gsum);
    let w: Vec<f64> = v
        .iter()
        .zip(&ct_gsum)
        .map(|(v, c)| v - 0.5 * h * c)
        .collect();

    // u = g2 - (h/2) H(z2) C w
    let cw = k.precond.matvec(&w);
    let hcw = hessian_times(p, z2, &cw);
    let u: Vec<f64> = g2.iter().zip(&hcw).map(|(g, h2)| g - 0.5 * h * h2).collect();

    // d z'/d log_h = -h^2 CC^T g + h C v
    let cct_g = k.precond.cct_matvec(&g);
    let cv = k.precond.matvec(v);
    let dz_dlog: Vec<f64> = cct_g
        .iter()
        .zip(&cv)
        .map(|(a, b)| -h * h * a + h * b)
        .collect();
    let dlog_h = dot(&u, &dz_dlog) - 0.5 * h * dot(&w, &ct_gsum);

    // G_C = -(h^2/2)[u (C^T g)^T + g (C^T u)^T] + h u v^T - (h/2)(g+g2) w^T
    let mut gc = DenseMatrix::zeros(d, d);
    let ct_g = k.precond.tr_matvec(&g);
    let ct_u = k.precond.tr_matvec(&u);
    let scaled_u: Vec<f64> = u.iter().map(|x| -0.5 * h * h * x).collect();
    add_outer(&mut gc, &scaled_u, &ct_g);
    let scaled_g: Vec<f64> = g.iter().map(|x| -0.5 * h * h * x).collect();
    add_outer(&mut gc, &scaled_g, &ct_u);
    let hu: Vec<f64> = u.iter().map(|x| h * x).collect();
    add_outer(&mut gc, &hu, v);
    let gs: Vec<f64> = gsum.iter().map(|x| -0.5 * h * x).collect();
    add_outer(&mut gc, &gs, &w);

    (dlog_h, gc)
}

/// Adjoint pass through the leapfrog trajectory: gradient in `C` of the
/// HMC energy error at fixed noise. Two HVPs per reverse step supply the
/// curvature couplings.
fn hmc_delta_grad(z: &[f64], out: &KernelOutput, p: &dyn Potential, k: &KernelParams) -> Result<DenseMatrix> {
    let d = z.len();
    let traj = hmc_leapfrog(z, &out.noise, p, k)?;
    let steps = traj.half_momenta.len();
    let p_l = traj.final_momentum();

    let mut gc = DenseMatrix::zeros(d, d);
    // Direct term from the final kinetic energy 1/2 p_L^T CC^T p_L.
    {
        let ct_pl = k.precond.tr_matvec(p_l);
        let mut scaled = vec![0.0; d];
        scaled.copy_from_slice(p_l);
        add_outer(&mut gc, &scaled, &ct_pl);
    }

    // Seeds: dDelta/dq_L = grad U(q_L); dDelta/dp_L = CC^T p_L.
    let mut aq: Vec<f64> = traj.gradients[steps].clone();
    let mut bp: Vec<f64> = k.precond.cct_matvec(p_l);

    for step in (0..steps).rev() {
        let q_next = &traj.positions[step + 1];
        let q_cur = &traj.positions[step];
        let ph = &traj.half_momenta[step];

        // p_{k+1} = ph - 1/2 grad U(q_{k+1})
        let h_bp = hessian_times(p, q_next, &bp);
        let aq_total: Vec<f64> = aq.iter().zip(&h_bp).map(|(a, h)| a - 0.5 * h).collect();

        // q_{k+1} = q_k + CC^T ph
        let c_ph: Vec<f64> = {
            let m = k.precond.cct_matvec(&aq_total);
            bp.iter().zip(&m).map(|(b, m)| b + m).collect()
        };
        add_cct_grad(&mut gc, &aq_total, ph, &k.precond);

        // ph = p_k - 1/2 grad U(q_k)
        let h_cph = hessian_times(p, q_cur, &c_ph);
        aq = aq_total
            .iter()
            .zip(&h_cph)
            .map(|(a, h)| a - 0.5 * h)
            .collect();
        bp = c_ph;
    }

    // p_0 = C^{-T} v: gradient -(C^{-T} v)(C^{-1} bp)^T.
    let p0 = traj.initial_momentum().to_vec();
    let cinv_bp = k.precond.inv_matvec(&bp);
    let neg_p0: Vec<f64> = p0.iter().map(|x| -x).collect();
    add_outer(&mut gc, &neg_p0, &cinv_bp);

    Ok(gc)
}

/// Gradient in `C` of `log|det(I - c_L C^T H C)|` with the midpoint
/// curvature `H` held fixed: `-2 c_L H C G^{-1}` (the argument is
/// symmetric, so both trace terms coincide).
fn entropy_det_grad(
    q_mid: &[f64],
    p: &dyn Potential,
    k: &KernelParams,
) -> Result<DenseMatrix> {
    let d = k.dim();
    let coeff = (k.leapfrog * k.leapfrog - 1) as f64 / 6.0;
    if coeff == 0.0 {
        return Ok(DenseMatrix::zeros(d, d));
    }
    let owned;
    let h = match p.constant_hessian() {
        Some(h) => h,
        None => {
            owned = assemble_hessian(p, q_mid);
            &owned
        }
    };
    let c = k.precond.realize();
    let hc = h.matmul(&c);
    let b = c.transpose().matmul(&hc).symmetrized();
    let mut g = DenseMatrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            g[(i, j)] -= coeff * b[(i, j)];
        }
    }
    let ginv = LuFactors::new(&g, 1e-12)?.inverse();
    Ok(hc.matmul(&ginv).scale(-2.0 * coeff))
}

/// Pathwise gradient of the per-step speed-measure term
///
/// `log alpha(z_prev, T(v)) - beta * log r(z_prev, T(v))`
///
/// with respect to the stored proposal parameters, at the realized noise
/// draw recorded in `out`.
///
/// The `min(0, -delta)` subgradient convention: the `log alpha` part
/// contributes `-d delta` when `delta > 0` and nothing when `delta <= 0`
/// (an accepted-with-certainty move carries no improvement direction; the
/// tie is assigned zero). The `-beta log r` part reduces, at fixed noise,
/// to `beta` times the entropy gradient: `d` per unit of `log h` plus one
/// per stored log-diagonal entry (plus the curvature-determinant term for
/// HMC, with the midpoint curvature detached).
pub fn speed_measure_grad_contrib(
    out: &KernelOutput,
    z_prev: &[f64],
    p: &dyn Potential,
    k: &KernelParams,
) -> Result<Phi1Grad> {
    let mut grad = Phi1Grad::zeros_like(k);
    let d = k.dim() as f64;
    let beta = k.beta;

    match k.kind {
        KernelKind::Mala => {
            if out.energy_error > 0.0 && out.energy_error.is_finite() {
                let (dlog_h, gc) = mala_delta_grad(z_prev, out, p, k);
                let (diag, strict) = map_to_storage(&gc, &k.precond);
                grad.log_h -= dlog_h;
                for (g, v) in grad.diag.iter_mut().zip(&diag) {
                    *g -= v;
                }
                for (g, v) in grad.strict.iter_mut().zip(&strict) {
                    *g -= v;
                }
            }
            // -beta d(log r)/d(.) at fixed noise: log r = log nu(v)
            // - d log h - log|det C|.
            grad.log_h += beta * d;
            for g in grad.diag.iter_mut() {
                *g += beta;
            }
        }
        KernelKind::Hmc => {
            if out.energy_error > 0.0 && out.energy_error.is_finite() {
                let gc = hmc_delta_grad(z_prev, out, p, k)?;
                let (diag, strict) = map_to_storage(&gc, &k.precond);
                for (g, v) in grad.diag.iter_mut().zip(&diag) {
                    *g -= v;
                }
                for (g, v) in grad.strict.iter_mut().zip(&strict) {
                    *g -= v;
                }
            }
            // -beta d(log r)/dC: the log|det C| term plus the determinant
            // of the linearized-curvature factor.
            let traj = hmc_leapfrog(z_prev, &out.noise, p, k)?;
            let det_grad = entropy_det_grad(traj.midpoint(), p, k)?;
            let (diag, strict) = map_to_storage(&det_grad, &k.precond);
            for (g, v) in grad.diag.iter_mut().zip(&diag) {
                *g += beta * v;
            }
            for (g, v) in grad.strict.iter_mut().zip(&strict) {
                *g += beta * v;
            }
            for g in grad.diag.iter_mut() {
                *g += beta;
            }
        }
    }
    Ok(grad)
}

/// Multiplicative acceptance controller for the entropy weight:
///
/// `beta' = beta * (1 + rho4 * (accept_count/k_steps - alpha_star))`
///
/// floored at 1e-8. Acceptance above target raises `beta` (more entropy,
/// bolder proposals); below target lowers it.
pub fn beta_update(
    beta: f64,
    accept_count: usize,
    k_steps: usize,
    alpha_star: f64,
    rho4: f64,
) -> f64 {
    debug_assert!(k_steps >= 1);
    debug_assert!(accept_count <= k_steps);
    let rate = accept_count as f64 / k_steps as f64;
    (beta * (1.0 + rho4 * (rate - alpha_star))).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::mala::{mala_energy_error, mala_propose};
    use crate::kernels::mh::mh_step;
    use crate::kernels::hmc::{hmc_energy_error, hmc_log_r_realized};
    use crate::numerics::{DenseMatrix, RngStream};
    use crate::targets::GaussianPotential;

    fn random_spd(dim: usize, shift: f64, rng: &mut RngStream) -> DenseMatrix {
        let a = DenseMatrix::from_fn(dim, dim, |_, _| rng.standard_normal());
        let mut m = a.transpose().matmul(&a);
        for i in 0..dim {
            m[(i, i)] += shift;
        }
        m
    }

    /// Pathwise objective at fixed noise, recomputed from perturbed
    /// parameters; the finite-difference oracle for the analytic gradient.
    fn objective(z: &[f64], v: &[f64], p: &dyn Potential, k: &KernelParams, beta: f64) -> f64 {
        match k.kind {
            KernelKind::Mala => {
                let z2 = mala_propose(z, v, p, k).unwrap();
                let delta = mala_energy_error(z, &z2, v, p, k).unwrap();
                let d = z.len() as f64;
                let log_nu = -0.5 * v.iter().map(|x| x * x).sum::<f64>()
                    - 0.5 * d * crate::numerics::LN_2PI;
                let log_r = log_nu - d * k.log_h - k.precond.log_det();
                (-delta).min(0.0) - beta * log_r
            }
            KernelKind::Hmc => {
                let traj = hmc_leapfrog(z, v, p, k).unwrap();
                let delta = hmc_energy_error(
                    z,
                    traj.proposed(),
                    traj.initial_momentum(),
                    traj.final_momentum(),
                    p,
                    k,
                );
                let log_r = hmc_log_r_realized(k, v, traj.midpoint(), p).unwrap();
                (-delta).min(0.0) - beta * log_r
            }
        }
    }

    fn perturb(k: &KernelParams, coord: usize, eps: f64) -> KernelParams {
        let mut kp = k.clone();
        match &mut kp.precond {
            Preconditioner::Diagonal(s) => {
                if coord == 0 {
                    kp.log_h += eps;
                } else {
                    s[coord - 1] += eps;
                }
            }
            Preconditioner::LowerTriangular(l) => {
                let d = l.dim();
                if coord == 0 {
                    kp.log_h += eps;
                } else if coord <= d {
                    l.log_diag_mut()[coord - 1] += eps;
                } else {
                    l.strict_mut()[coord - 1 - d] += eps;
                }
            }
        }
        kp
    }

    fn n_coords(k: &KernelParams) -> usize {
        match &k.precond {
            Preconditioner::Diagonal(s) => 1 + s.len(),
            Preconditioner::LowerTriangular(l) => 1 + l.dim() + l.strict().len(),
        }
    }

    fn grad_coord(g: &Phi1Grad, k: &KernelParams, coord: usize) -> f64 {
        match &k.precond {
            Preconditioner::Diagonal(_) => {
                if coord == 0 {
                    g.log_h
                } else {
                    g.diag[coord - 1]
                }
            }
            Preconditioner::LowerTriangular(l) => {
                let d = l.dim();
                if coord == 0 {
                    g.log_h
                } else if coord <= d {
                    g.diag[coord - 1]
                } else {
                    g.strict[coord - 1 - d]
                }
            }
        }
    }

    fn check_against_fd(
        pot: &dyn Potential,
        k: &KernelParams,
        z: &[f64],
        rng: &mut RngStream,
        beta: f64,
        tol: f64,
    ) {
        let mut kk = k.clone();
        kk.beta = beta;
        // Find a state/noise pair with delta comfortably > 0 so the
        // subgradient branch is unambiguous for finite differences.
        let mut out = None;
        for _ in 0..200 {
            let candidate = mh_step(z, pot, &kk, rng).unwrap();
            if candidate.energy_error > 0.05 && candidate.energy_error.is_finite() {
                out = Some(candidate);
                break;
            }
        }
        let out = out.expect("no positive-energy-error proposal found");
        let grad = speed_measure_grad_contrib(&out, z, pot, &kk).unwrap();

        let eps = 1e-6;
        let skip_log_h = kk.kind == KernelKind::Hmc;
        for coord in 0..n_coords(&kk) {
            if coord == 0 && skip_log_h {
                continue;
            }
            let kp = perturb(&kk, coord, eps);
            let km = perturb(&kk, coord, -eps);
            let fd = (objective(z, &out.noise, pot, &kp, beta)
                - objective(z, &out.noise, pot, &km, beta))
                / (2.0 * eps);
            let got = grad_coord(&grad, &kk, coord);
            let scale = fd.abs().max(1e-3);
            assert!(
                (got - fd).abs() / scale <= tol,
                "coord {coord}: analytic {got} vs fd {fd}"
            );
        }
    }

    #[test]
    fn mala_gradient_matches_fd_diagonal() {
        let mut rng = RngStream::new(60, 0);
        let pot = GaussianPotential::new(vec![0.0; 3], random_spd(3, 0.6, &mut rng));
        let mut k = KernelParams::mala(3);
        k.log_h = (0.8f64).ln();
        let z: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        check_against_fd(&pot, &k, &z, &mut rng, 0.0, 1e-4);
        check_against_fd(&pot, &k, &z, &mut rng, 1.0, 1e-4);
    }

    #[test]
    fn mala_gradient_matches_fd_lower_triangular() {
        let mut rng = RngStream::new(61, 0);
        let pot = GaussianPotential::new(vec![0.2, -0.3, 0.5], random_spd(3, 0.6, &mut rng));
        let mut k = KernelParams::mala(3).with_lower_triangular();
        k.log_h = (0.7f64).ln();
        if let Preconditioner::LowerTriangular(l) = &mut k.precond {
            for v in l.strict_mut() {
                *v = 0.2 * rng.standard_normal();
            }
        }
        let z: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        check_against_fd(&pot, &k, &z, &mut rng, 0.0, 1e-4);
        check_against_fd(&pot, &k, &z, &mut rng, 0.7, 1e-4);
    }

    #[test]
    fn hmc_gradient_matches_fd_both_preconditioners() {
        let mut rng = RngStream::new(62, 0);
        let pot = GaussianPotential::new(vec![0.0; 3], random_spd(3, 0.6, &mut rng));
        let z: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();

        let mut kd = KernelParams::hmc(3, 3);
        if let Preconditioner::Diagonal(s) = &mut kd.precond {
            s.iter_mut().for_each(|v| *v = (0.6f64).ln());
        }
        check_against_fd(&pot, &kd, &z, &mut rng, 0.0, 1e-4);
        check_against_fd(&pot, &kd, &z, &mut rng, 1.0, 1e-4);

        let mut kl = KernelParams::hmc(3, 3).with_lower_triangular();
        if let Preconditioner::LowerTriangular(l) = &mut kl.precond {
            l.log_diag_mut().iter_mut().for_each(|v| *v = (0.6f64).ln());
            for v in l.strict_mut() {
                *v = 0.1 * rng.standard_normal();
            }
        }
        check_against_fd(&pot, &kl, &z, &mut rng, 0.0, 1e-4);
        check_against_fd(&pot, &kl, &z, &mut rng, 0.5, 1e-4);
    }

    #[test]
    fn certain_acceptance_contributes_no_log_alpha_gradient() {
        // delta < 0 and beta = 0: the whole contribution is zero.
        let mut rng = RngStream::new(63, 0);
        let pot = GaussianPotential::standard(2);
        let mut k = KernelParams::mala(2);
        k.log_h = (0.5f64).ln();
        k.beta = 0.0;
        let z = [1.0, -1.0];
        let out = loop {
            let candidate = mh_step(&z, &pot, &k, &mut rng).unwrap();
            if candidate.energy_error < -1e-6 {
                break candidate;
            }
        };
        let g = speed_measure_grad_contrib(&out, &z, &pot, &k).unwrap();
        assert_eq!(g.log_h, 0.0);
        assert!(g.diag.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn entropy_term_gradient_in_log_h_is_dimension() {
        // beta = 1, MALA, diagonal C: the -beta log r part contributes
        // exactly +d to the log_h gradient.
        let mut rng = RngStream::new(64, 0);
        let pot = GaussianPotential::standard(4);
        let mut k = KernelParams::mala(4);
        k.log_h = (0.5f64).ln();
        k.beta = 1.0;
        let z = [1.0, 1.0, -1.0, -1.0];
        // Pick a draw with delta < 0 so the log-alpha part is inert.
        let out = loop {
            let candidate = mh_step(&z, &pot, &k, &mut rng).unwrap();
            if candidate.energy_error < -1e-6 {
                break candidate;
            }
        };
        let g = speed_measure_grad_contrib(&out, &z, &pot, &k).unwrap();
        assert!((g.log_h - 4.0).abs() < 1e-12);
        assert!(g.diag.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn beta_update_arithmetic() {
        assert!((beta_update(1.0, 5, 10, 0.5, 0.1) - 1.0).abs() < 1e-15);
        assert!((beta_update(1.0, 10, 10, 0.5, 0.1) - 1.05).abs() < 1e-15);
        assert!((beta_update(1.0, 0, 10, 0.5, 0.1) - 0.95).abs() < 1e-15);
        // Floor.
        assert_eq!(beta_update(1e-8, 0, 1, 0.99, 2.0), 1e-8);
    }
}
