use super::factor::LowerTriangularFactor;
use super::matrix::{dot, DenseMatrix};
use super::{cholesky, Error, Result};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Log-density of `N(mean, L L^T)` at `x`, given the Cholesky-style factor
/// `L`:
///
/// `log N(x; mean, LL^T) = -1/2 ||L^{-1}(x - mean)||^2 - sum_i log L_ii - (d/2) log 2pi`
pub fn gaussian_logpdf(x: &[f64], mean: &[f64], cov_factor: &LowerTriangularFactor) -> Result<f64> {
    let d = cov_factor.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mean.len(),
        });
    }
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let w = cov_factor.solve_lower(&diff);
    Ok(-0.5 * dot(&w, &w) - cov_factor.log_det() - 0.5 * d as f64 * LN_2PI)
}

/// Closed-form KL divergence between two Gaussians,
/// `KL(N(mean1, cov1) || N(mean2, cov2))`:
///
/// `1/2 [ tr(S2^{-1} S1) + (m2-m1)^T S2^{-1} (m2-m1) - d + log det S2 - log det S1 ]`
///
/// Nonnegative up to ~1e-12 of factorization slack.
pub fn kl_gaussians(
    mean1: &[f64],
    cov1: &DenseMatrix,
    mean2: &[f64],
    cov2: &DenseMatrix,
) -> Result<f64> {
    let d = mean1.len();
    if mean2.len() != d || cov1.rows() != d || cov2.rows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mean2.len().max(cov1.rows()).max(cov2.rows()),
        });
    }
    let l1 = cholesky(cov1)?;
    let l2 = cholesky(cov2)?;

    // tr(S2^{-1} S1) = ||L2^{-1} L1||_F^2, column by column.
    let mut trace = 0.0;
    let l1m = l1.realize();
    for j in 0..d {
        let col: Vec<f64> = (0..d).map(|i| l1m[(i, j)]).collect();
        let w = l2.solve_lower(&col);
        trace += dot(&w, &w);
    }

    let diff: Vec<f64> = mean2.iter().zip(mean1).map(|(a, b)| a - b).collect();
    let w = l2.solve_lower(&diff);
    let maha = dot(&w, &w);

    Ok(0.5 * (trace + maha - d as f64) + l2.log_det() - l1.log_det())
}

#[cfg(test)]
mod tests {
    use super::super::rng::RngStream;
    use super::*;

    #[test]
    fn standard_normal_at_mode() {
        let l = LowerTriangularFactor::identity(1);
        let lp = gaussian_logpdf(&[0.0], &[0.0], &l).unwrap();
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-12);
        assert!((lp + 0.9189385332046727).abs() < 1e-12);
    }

    #[test]
    fn at_mean_only_normalizer_remains() {
        let l = LowerTriangularFactor::from_parts(2, vec![0.3, -0.2], vec![1.4]);
        let lp = gaussian_logpdf(&[1.0, -2.0], &[1.0, -2.0], &l).unwrap();
        assert!((lp - (-l.log_det() - LN_2PI)).abs() < 1e-12);
    }

    /// Direct dense-formula oracle with an explicitly inverted covariance.
    #[test]
    fn matches_explicit_inverse_formula() {
        let mut rng = RngStream::new(5, 2);
        let a = DenseMatrix::from_fn(4, 4, |_, _| rng.standard_normal());
        let mut cov = a.matmul(&a.transpose());
        for i in 0..4 {
            cov[(i, i)] += 1.0;
        }
        let l = cholesky(&cov).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let mean: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();

        // Oracle: invert covariance column-by-column using Gauss-Jordan.
        let inv = {
            let n = 4;
            let mut aug = DenseMatrix::zeros(n, 2 * n);
            for i in 0..n {
                for j in 0..n {
                    aug[(i, j)] = cov[(i, j)];
                }
                aug[(i, n + i)] = 1.0;
            }
            for col in 0..n {
                let mut piv = col;
                for r in col + 1..n {
                    if aug[(r, col)].abs() > aug[(piv, col)].abs() {
                        piv = r;
                    }
                }
                for j in 0..2 * n {
                    let tmp = aug[(col, j)];
                    aug[(col, j)] = aug[(piv, j)];
                    aug[(piv, j)] = tmp;
                }
                let p = aug[(col, col)];
                for j in 0..2 * n {
                    aug[(col, j)] /= p;
                }
                for r in 0..n {
                    if r != col {
                        let f = aug[(r, col)];
                        for j in 0..2 * n {
                            aug[(r, j)] -= f * aug[(col, j)];
                        }
                    }
                }
            }
            DenseMatrix::from_fn(n, n, |i, j| aug[(i, n + j)])
        };
        let diff: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let quad = dot(&diff, &inv.matvec(&diff));
        // log det via the 4x4 determinant from the factor's realized diag.
        let logdet = 2.0 * l.log_det();
        let want = -0.5 * quad - 0.5 * logdet - 2.0 * LN_2PI;

        let got = gaussian_logpdf(&x, &mean, &l).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn kl_identical_is_zero() {
        let cov = DenseMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let kl = kl_gaussians(&[0.5, -1.0], &cov, &[0.5, -1.0], &cov).unwrap();
        assert!(kl.abs() < 1e-12);
    }

    #[test]
    fn kl_unit_variance_mean_shift() {
        let cov = DenseMatrix::identity(1);
        let kl = kl_gaussians(&[0.0], &cov, &[1.0], &cov).unwrap();
        assert!((kl - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = RngStream::new(9, 4);
        let make_cov = |rng: &mut RngStream| {
            let a = DenseMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
            let mut c = a.matmul(&a.transpose());
            for i in 0..3 {
                c[(i, i)] += 0.8;
            }
            c
        };
        let c1 = make_cov(&mut rng);
        let c2 = make_cov(&mut rng);
        let m1: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let m2: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let l1 = cholesky(&c1).unwrap();

        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let eps: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let z: Vec<f64> = l1
                .matvec(&eps)
                .iter()
                .zip(&m1)
                .map(|(a, b)| a + b)
                .collect();
            let l2 = cholesky(&c2).unwrap();
            let term = gaussian_logpdf(&z, &m1, &l1).unwrap() - gaussian_logpdf(&z, &m2, &l2).unwrap();
            sum += term;
            sum_sq += term * term;
        }
        let mc = sum / n as f64;
        let var = (sum_sq / n as f64 - mc * mc).max(0.0);
        let se = (var / n as f64).sqrt();
        let kl = kl_gaussians(&m1, &c1, &m2, &c2).unwrap();
        assert!(
            (kl - mc).abs() <= 3.0 * se,
            "kl {kl} vs mc {mc} (se {se})"
        );
    }

    #[test]
    fn kl_nonnegative_random_pairs() {
        let mut rng = RngStream::new(13, 8);
        for _ in 0..50 {
            let a = DenseMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
            let mut c1 = a.matmul(&a.transpose());
            let b = DenseMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
            let mut c2 = b.matmul(&b.transpose());
            for i in 0..3 {
                c1[(i, i)] += 0.5;
                c2[(i, i)] += 0.5;
            }
            let m1: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let m2: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let kl = kl_gaussians(&m1, &c1, &m2, &c2).unwrap();
            assert!(kl >= -1e-12);
        }
    }
}
