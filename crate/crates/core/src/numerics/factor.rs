use super::matrix::DenseMatrix;
use crate::{Error, Result};

/// Lower-triangular factor with the diagonal stored in log-space.
///
/// The strictly lower part is unconstrained; the realized diagonal is
/// `exp(log_diag[i])`, hence always strictly positive and the factor is
/// always nonsingular. Storing the diagonal this way keeps gradient-based
/// adaptation of a preconditioner unconstrained: positivity is structural
/// rather than enforced by projection.
///
/// `det = prod_i exp(log_diag[i])`, so `log|det|` is just the sum of the
/// stored diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangularFactor {
    dim: usize,
    /// Log of the diagonal entries.
    log_diag: Vec<f64>,
    /// Strictly lower entries, packed row-major: row `i` contributes
    /// entries `(i, 0..i)` at offset `i*(i-1)/2`.
    strict: Vec<f64>,
}

impl LowerTriangularFactor {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            log_diag: vec![0.0; dim],
            strict: vec![0.0; dim * (dim - 1) / 2],
        }
    }

    pub fn from_parts(dim: usize, log_diag: Vec<f64>, strict: Vec<f64>) -> Self {
        assert_eq!(log_diag.len(), dim);
        assert_eq!(strict.len(), dim * (dim - 1) / 2);
        Self {
            dim,
            log_diag,
            strict,
        }
    }

    /// Builds from a realized dense lower triangle (row-major, `n*n` slice).
    /// The diagonal must be strictly positive.
    pub(crate) fn from_dense_lower(n: usize, l: &[f64]) -> Result<Self> {
        let mut log_diag = vec![0.0; n];
        let mut strict = vec![0.0; n * (n - 1) / 2];
        for i in 0..n {
            let d = l[i * n + i];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "factor diagonal {d:.3e} at row {i}"
                )));
            }
            log_diag[i] = d.ln();
            for j in 0..i {
                strict[row_offset(i) + j] = l[i * n + j];
            }
        }
        Ok(Self {
            dim: n,
            log_diag,
            strict,
        })
    }

    /// Builds the factor from a realized dense lower-triangular matrix.
    pub fn from_matrix(m: &DenseMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        Self::from_dense_lower(m.rows(), m.data())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_diag(&self) -> &[f64] {
        &self.log_diag
    }

    pub fn log_diag_mut(&mut self) -> &mut [f64] {
        &mut self.log_diag
    }

    pub fn strict(&self) -> &[f64] {
        &self.strict
    }

    pub fn strict_mut(&mut self) -> &mut [f64] {
        &mut self.strict
    }

    /// Realized entry `(i, j)`; zero above the diagonal.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering;
        match i.cmp(&j) {
            Ordering::Less => 0.0,
            Ordering::Equal => self.log_diag[i].exp(),
            Ordering::Greater => self.strict[row_offset(i) + j],
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.log_diag[i].exp()
    }

    /// `log|det|`, exact from storage.
    pub fn log_det(&self) -> f64 {
        self.log_diag.iter().sum()
    }

    pub fn realize(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j))
    }

    /// `L v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut s = self.diag(i) * v[i];
            let base = row_offset(i);
            for j in 0..i {
                s += self.strict[base + j] * v[j];
            }
            out[i] = s;
        }
        out
    }

    /// `L^T v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            out[i] += self.diag(i) * v[i];
            let base = row_offset(i);
            for j in 0..i {
                out[j] += self.strict[base + j] * v[i];
            }
        }
        out
    }

    /// Solves `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut s = b[i];
            let base = row_offset(i);
            for j in 0..i {
                s -= self.strict[base + j] * y[j];
            }
            y[i] = s / self.diag(i);
        }
        y
    }

    /// Solves `L^T y = b` by back substitution.
    pub fn solve_upper_tr(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in (0..self.dim).rev() {
            let mut s = b[i];
            for k in (i + 1)..self.dim {
                s -= self.strict[row_offset(k) + i] * y[k];
            }
            y[i] = s / self.diag(i);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_factor() -> LowerTriangularFactor {
        LowerTriangularFactor::from_parts(
            3,
            vec![0.2, -0.1, 0.4],
            vec![0.7, -1.3, 0.5],
        )
    }

    #[test]
    fn solves_invert_matvec() {
        let l = sample_factor();
        let v = [1.0, -2.0, 0.5];
        let b = l.matvec(&v);
        let back = l.solve_lower(&b);
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let bt = l.tr_matvec(&v);
        let back_t = l.solve_upper_tr(&bt);
        for (a, b) in v.iter().zip(&back_t) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_det_matches_realized_product() {
        let l = sample_factor();
        let prod: f64 = (0..3).map(|i| l.diag(i)).product();
        assert!((l.log_det() - prod.ln()).abs() < 1e-14);
    }

    #[test]
    fn realize_roundtrip() {
        let l = sample_factor();
        let back = LowerTriangularFactor::from_matrix(&l.realize()).unwrap();
        for i in 0..3 {
            for j in 0..=i {
                assert!((l.entry(i, j) - back.entry(i, j)).abs() < 1e-14);
            }
        }
    }
}

/// Packed offset of row `i` in the strictly-lower storage.
#[inline]
fn row_offset(i: usize) -> usize {
    i * i.saturating_sub(1) / 2
}
