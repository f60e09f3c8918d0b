//! Dense linear algebra, Gaussian log-densities, and seedable RNG streams.
//!
//! Everything is plain `f64` and row-major `Vec<f64>` storage; the scales
//! involved (latent dimensions up to a couple hundred, condition numbers up
//! to ~1e3) do not warrant an external linear-algebra backend.

mod eigen;
mod factor;
mod gaussian;
mod lu;
mod matrix;
mod rng;

pub use eigen::{condition_number, jacobi_eigenvalues};
pub use factor::LowerTriangularFactor;
pub use gaussian::{gaussian_logpdf, kl_gaussians};
pub use lu::LuFactors;
pub use matrix::DenseMatrix;
pub use rng::{sample_standard_normal, RngStream};

pub(crate) use gaussian::LN_2PI;

use crate::{Error, Result};

/// Cholesky factorization of a symmetric positive definite matrix.
///
/// Returns the lower factor `L` with `L L^T = m`. The diagonal of the
/// returned factor is stored in log-space (see [`LowerTriangularFactor`]);
/// that is a storage detail and does not affect the realized values.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot falls at or below
/// `dim * machine_epsilon * max_diagonal`.
pub fn cholesky(m: &DenseMatrix) -> Result<LowerTriangularFactor> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: m.cols(),
        });
    }
    let n = m.rows();
    let max_diag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let pivot_floor = n as f64 * f64::EPSILON * max_diag;

    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= pivot_floor {
                    return Err(Error::NotPositiveDefinite(format!(
                        "pivot {s:.3e} at row {i} (floor {pivot_floor:.3e})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    LowerTriangularFactor::from_dense_lower(n, &l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(dim: usize, rng: &mut RngStream) -> DenseMatrix {
        // A^T A + I is SPD.
        let a = DenseMatrix::from_fn(dim, dim, |_, _| rng.standard_normal());
        let mut m = a.transpose().matmul(&a);
        for i in 0..dim {
            m[(i, i)] += 1.0;
        }
        m
    }

    #[test]
    fn cholesky_identity_is_identity() {
        let l = cholesky(&DenseMatrix::identity(3)).unwrap();
        let r = l.realize();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_2x2_known_factor() {
        let m = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let l = cholesky(&m).unwrap();
        assert!((l.entry(0, 0) - 2.0).abs() < 1e-12);
        assert!((l.entry(1, 0) - 1.0).abs() < 1e-12);
        assert!((l.entry(1, 1) - 2.0_f64.sqrt()).abs() < 1e-12);
        // Reconstruction check.
        let r = l.realize();
        let p = r.matmul(&r.transpose());
        assert!(p.sub(&m).frobenius_norm() / m.frobenius_norm() <= 1e-10);
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = RngStream::new(7, 0);
        for dim in [2, 5, 8] {
            let m = random_spd(dim, &mut rng);
            let l = cholesky(&m).unwrap().realize();
            let p = l.matmul(&l.transpose());
            assert!(p.sub(&m).frobenius_norm() / m.frobenius_norm() <= 1e-10);
        }
    }

    #[test]
    fn cholesky_reconstructs_dim_200() {
        let mut rng = RngStream::new(11, 0);
        let m = random_spd(200, &mut rng);
        let l = cholesky(&m).unwrap().realize();
        let p = l.matmul(&l.transpose());
        assert!(p.sub(&m).frobenius_norm() / m.frobenius_norm() <= 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(cholesky(&m), Err(Error::NotPositiveDefinite(_))));
    }
}
