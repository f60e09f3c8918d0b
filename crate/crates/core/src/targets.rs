//! The potential abstraction consumed by every sampler.
//!
//! A potential is a differentiable negative log posterior
//! `U(z|x) = -log p(x|z) - log p(z)` (up to an additive constant), exposing
//! value, gradient, and Hessian-vector products. Quadratic targets provide
//! analytic curvature; everything else falls back to central-difference
//! HVPs of the gradient.

use crate::autodiff::{hvp_default_eps, hvp_finite_difference, Tensor};
use crate::numerics::DenseMatrix;
use crate::{Error, Result};

/// Gradient of `log p(x|z) + log p(z)` with respect to named generative
/// parameters, at fixed `z`.
pub type ThetaGrad = Vec<(String, Tensor)>;

/// Differentiable negative log posterior of the latent given one
/// observation.
pub trait Potential {
    fn dim(&self) -> usize;

    /// `U(z)`, finite on the chain's reachable set.
    fn value(&self, z: &[f64]) -> f64;

    /// `grad U(z)`.
    fn grad(&self, z: &[f64]) -> Vec<f64>;

    /// `hess U(z) * v`; central differences of the gradient unless the
    /// implementation has analytic curvature.
    fn hvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let eps = hvp_default_eps(z);
        hvp_finite_difference(|p| self.grad(p), z, v, eps)
    }

    /// The constant Hessian for quadratic potentials, if any. Lets the
    /// entropy machinery skip per-point Hessian assembly.
    fn constant_hessian(&self) -> Option<&DenseMatrix> {
        None
    }

    /// Gradient of `log p(x|z) + log p(z)` with respect to the generative
    /// parameters at fixed `z`. Empty for parameter-free test targets.
    fn theta_grad(&self, _z: &[f64]) -> ThetaGrad {
        Vec::new()
    }
}

/// Checked Hessian-vector product.
pub fn potential_hvp(p: &dyn Potential, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if z.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: z.len(),
        });
    }
    if v.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: v.len(),
        });
    }
    Ok(p.hvp(z, v))
}

/// Quadratic potential `U(z) = 1/2 (z - mean)^T P (z - mean)`, the Gaussian
/// test fixture: gradient vanishes at the mean and the Hessian is `P`
/// everywhere.
#[derive(Debug, Clone)]
pub struct GaussianPotential {
    mean: Vec<f64>,
    precision: DenseMatrix,
}

impl GaussianPotential {
    pub fn new(mean: Vec<f64>, precision: DenseMatrix) -> Self {
        assert_eq!(mean.len(), precision.rows());
        assert_eq!(precision.rows(), precision.cols());
        Self { mean, precision }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], DenseMatrix::identity(dim))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn precision(&self) -> &DenseMatrix {
        &self.precision
    }
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let diff: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        0.5 * diff
            .iter()
            .zip(&self.precision.matvec(&diff))
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.precision.matvec(&diff)
    }

    fn hvp(&self, _z: &[f64], v: &[f64]) -> Vec<f64> {
        self.precision.matvec(v)
    }

    fn constant_hessian(&self) -> Option<&DenseMatrix> {
        Some(&self.precision)
    }
}

/// Assembles the full Hessian from `dim` HVP calls (unit directions).
pub fn assemble_hessian(p: &dyn Potential, z: &[f64]) -> DenseMatrix {
    let d = p.dim();
    let mut h = DenseMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = p.hvp(z, &e);
        for i in 0..d {
            h[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random_gaussian_potential(dim: usize, rng: &mut RngStream) -> GaussianPotential {
        let a = DenseMatrix::from_fn(dim, dim, |_, _| rng.standard_normal());
        let mut p = a.transpose().matmul(&a);
        for i in 0..dim {
            p[(i, i)] += 0.5;
        }
        let mean = (0..dim).map(|_| rng.standard_normal()).collect();
        GaussianPotential::new(mean, p)
    }

    #[test]
    fn gradient_vanishes_at_mean() {
        let mut rng = RngStream::new(1, 1);
        let pot = random_gaussian_potential(4, &mut rng);
        let g = pot.grad(pot.mean());
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn hvp_is_precision_times_v() {
        let mut rng = RngStream::new(2, 1);
        let pot = random_gaussian_potential(3, &mut rng);
        let z: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let got = potential_hvp(&pot, &z, &v).unwrap();
        let want = pot.precision().matvec(&v);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn hvp_zero_direction() {
        let pot = GaussianPotential::standard(3);
        let got = potential_hvp(&pot, &[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
        assert_eq!(got, vec![0.0; 3]);
    }

    #[test]
    fn hvp_dimension_checked() {
        let pot = GaussianPotential::standard(3);
        assert!(matches!(
            potential_hvp(&pot, &[0.0; 2], &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn grad_matches_finite_differences_of_value() {
        let mut rng = RngStream::new(3, 1);
        let pot = random_gaussian_potential(5, &mut rng);
        let z: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let g = pot.grad(&z);
        let step = 1e-5;
        for i in 0..5 {
            let mut zp = z.clone();
            zp[i] += step;
            let mut zm = z.clone();
            zm[i] -= step;
            let fd = (pot.value(&zp) - pot.value(&zm)) / (2.0 * step);
            assert!((g[i] - fd).abs() / fd.abs().max(1.0) <= 1e-5);
        }
    }

    #[test]
    fn assembled_hessian_matches_precision() {
        let mut rng = RngStream::new(4, 1);
        let pot = random_gaussian_potential(4, &mut rng);
        let h = assemble_hessian(&pot, &[0.0; 4]);
        assert!(h.sub(pot.precision()).frobenius_norm() < 1e-12);
    }
}
