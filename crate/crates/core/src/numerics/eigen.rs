use super::matrix::DenseMatrix;
use crate::{Error, Result};

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations, sorted
/// ascending. Intended for desk-scale dimensions (<= 256).
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: m.cols(),
        });
    }
    if !m.is_symmetric(1e-10) {
        return Err(Error::ShapeMismatch(
            "jacobi eigen solver requires a symmetric matrix".into(),
        ));
    }
    let n = m.rows();
    let mut a = m.symmetrized();
    if n == 1 {
        return Ok(vec![a[(0, 0)]]);
    }

    let off = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..i {
                s += a[(i, j)] * a[(i, j)];
            }
        }
        (2.0 * s).sqrt()
    };
    let tol = 1e-14 * a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-root tangent keeps rotations numerically tame.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eig)
}

/// Condition number `lambda_max / lambda_min` of a symmetric positive
/// definite matrix, computed from its symmetric eigendecomposition.
pub fn condition_number(m: &DenseMatrix) -> Result<f64> {
    let eig = jacobi_eigenvalues(m)?;
    let min = eig[0];
    let max = eig[eig.len() - 1];
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest eigenvalue {min:.3e}"
        )));
    }
    Ok(max / min)
}

#[cfg(test)]
mod tests {
    use super::super::rng::RngStream;
    use super::*;

    #[test]
    fn identity_has_unit_condition_number() {
        assert!((condition_number(&DenseMatrix::identity(5)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_condition_number() {
        let m = DenseMatrix::diag(&[1.0, 100.0]);
        assert!((condition_number(&m).unwrap() - 100.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_indefinite() {
        let m = DenseMatrix::diag(&[1.0, -2.0]);
        assert!(matches!(
            condition_number(&m),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    /// Independent oracle: power iteration for lambda_max on `m` and, via a
    /// spectral shift, on `sigma*I - m` for lambda_min. No solves shared
    /// with the implementation under test.
    fn power_iteration_extremes(m: &DenseMatrix, rng: &mut RngStream) -> (f64, f64) {
        let n = m.rows();
        let dominant = |mat: &DenseMatrix, rng: &mut RngStream| -> f64 {
            let mut v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let mut lambda = 0.0;
            for _ in 0..20_000 {
                let w = mat.matvec(&v);
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                v = w.iter().map(|x| x / norm).collect();
            }
            lambda
        };
        let lmax = dominant(m, rng);
        // Shift: eigenvalues of sigma*I - m are sigma - lambda, dominant for
        // the smallest lambda of m when sigma >= lmax.
        let sigma = 1.5 * lmax.abs() + 1.0;
        let mut shifted = m.scale(-1.0);
        for i in 0..n {
            shifted[(i, i)] += sigma;
        }
        let lmin = sigma - dominant(&shifted, rng);
        (lmax, lmin)
    }

    #[test]
    fn matches_power_iteration_oracle() {
        let mut rng = RngStream::new(42, 1);
        let a = DenseMatrix::from_fn(6, 6, |_, _| rng.standard_normal());
        let mut m = a.transpose().matmul(&a);
        for i in 0..6 {
            m[(i, i)] += 0.5;
        }
        let (lmax, lmin) = power_iteration_extremes(&m, &mut rng);
        let want = lmax / lmin;
        let got = condition_number(&m).unwrap();
        assert!(
            (got - want).abs() / want <= 1e-8,
            "jacobi {got} vs power-iteration {want}"
        );
    }

    #[test]
    fn scale_invariance() {
        let mut rng = RngStream::new(3, 9);
        let a = DenseMatrix::from_fn(4, 4, |_, _| rng.standard_normal());
        let mut m = a.transpose().matmul(&a);
        for i in 0..4 {
            m[(i, i)] += 1.0;
        }
        let k1 = condition_number(&m).unwrap();
        for alpha in [1e-3, 0.5, 7.0, 1e4] {
            let k2 = condition_number(&m.scale(alpha)).unwrap();
            assert!((k1 - k2).abs() / k1 <= 1e-12);
        }
    }
}
