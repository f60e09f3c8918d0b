use super::matrix::DenseMatrix;
use crate::{Error, Result};

/// Dense LU factorization with partial pivoting. Used for signed
/// log-determinants and small inverses of (possibly indefinite) symmetric
/// matrices; not a performance-critical path.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    /// Combined L (unit diagonal, below) and U (on and above).
    lu: DenseMatrix,
    /// Row permutation applied to the input.
    perm: Vec<usize>,
    /// Sign of the permutation.
    perm_sign: f64,
}

impl LuFactors {
    /// Factorizes `m`; fails when a pivot is below `singular_tol` times the
    /// largest absolute entry.
    pub fn new(m: &DenseMatrix, singular_tol: f64) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        let n = m.rows();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut perm_sign = 1.0;
        let scale = m
            .data()
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()))
            .max(f64::MIN_POSITIVE);

        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if lu[(r, col)].abs() > lu[(piv, col)].abs() {
                    piv = r;
                }
            }
            if lu[(piv, col)].abs() <= singular_tol * scale {
                return Err(Error::SingularJacobian);
            }
            if piv != col {
                for j in 0..n {
                    let tmp = lu[(col, j)];
                    lu[(col, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
                perm.swap(col, piv);
                perm_sign = -perm_sign;
            }
            let pivot = lu[(col, col)];
            for r in col + 1..n {
                let f = lu[(r, col)] / pivot;
                lu[(r, col)] = f;
                for j in col + 1..n {
                    let sub = f * lu[(col, j)];
                    lu[(r, j)] -= sub;
                }
            }
        }
        Ok(Self {
            n,
            lu,
            perm,
            perm_sign,
        })
    }

    /// `(log|det|, sign)` of the factorized matrix.
    pub fn log_abs_det(&self) -> (f64, f64) {
        let mut log = 0.0;
        let mut sign = self.perm_sign;
        for i in 0..self.n {
            let d = self.lu[(i, i)];
            log += d.abs().ln();
            if d < 0.0 {
                sign = -sign;
            }
        }
        (log, sign)
    }

    /// Solves `m x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..self.n).rev() {
            for j in i + 1..self.n {
                let sub = self.lu[(i, j)] * y[j];
                y[i] -= sub;
            }
            y[i] /= self.lu[(i, i)];
        }
        y
    }

    /// Dense inverse, column by column.
    pub fn inverse(&self) -> DenseMatrix {
        let mut inv = DenseMatrix::zeros(self.n, self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..self.n {
                inv[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::super::rng::RngStream;
    use super::*;

    #[test]
    fn solve_and_det_roundtrip() {
        let mut rng = RngStream::new(17, 0);
        let m = DenseMatrix::from_fn(5, 5, |_, _| rng.standard_normal());
        let lu = LuFactors::new(&m, 1e-14).unwrap();
        let b: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let x = lu.solve(&b);
        let back = m.matvec(&x);
        for (a, c) in b.iter().zip(&back) {
            assert!((a - c).abs() < 1e-10);
        }
        let inv = lu.inverse();
        let prod = m.matmul(&inv);
        assert!(prod.sub(&DenseMatrix::identity(5)).frobenius_norm() < 1e-10);
    }

    #[test]
    fn signed_determinant_2x2() {
        // det [[0, 1], [1, 0]] = -1: pure permutation, log|det| = 0.
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let lu = LuFactors::new(&m, 1e-14).unwrap();
        let (log, sign) = lu.log_abs_det();
        assert!(log.abs() < 1e-14);
        assert_eq!(sign, -1.0);
    }

    #[test]
    fn singular_matrix_rejected() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(
            LuFactors::new(&m, 1e-12),
            Err(Error::SingularJacobian)
        ));
    }
}
