use crate::numerics::{DenseMatrix, LowerTriangularFactor};

/// Proposal-shaping matrix `C`, realized from unconstrained storage.
///
/// Diagonal preconditioners store log-scales; lower-triangular ones store a
/// [`LowerTriangularFactor`] (free strict lower part, log-space diagonal).
/// Either way the realized `C` is nonsingular by construction and plain
/// gradient ascent on the stored entries stays in-bounds.
#[derive(Debug, Clone)]
pub enum Preconditioner {
    Diagonal(Vec<f64>),
    LowerTriangular(LowerTriangularFactor),
}

impl Preconditioner {
    pub fn identity_diagonal(dim: usize) -> Self {
        Preconditioner::Diagonal(vec![0.0; dim])
    }

    pub fn identity_lower_triangular(dim: usize) -> Self {
        Preconditioner::LowerTriangular(LowerTriangularFactor::identity(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            Preconditioner::Diagonal(s) => s.len(),
            Preconditioner::LowerTriangular(l) => l.dim(),
        }
    }

    /// `C v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Preconditioner::Diagonal(s) => s
                .iter()
                .zip(v)
                .map(|(s, v)| s.exp() * v)
                .collect(),
            Preconditioner::LowerTriangular(l) => l.matvec(v),
        }
    }

    /// `C^T v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Preconditioner::Diagonal(s) => s
                .iter()
                .zip(v)
                .map(|(s, v)| s.exp() * v)
                .collect(),
            Preconditioner::LowerTriangular(l) => l.tr_matvec(v),
        }
    }

    /// `C C^T v`.
    pub fn cct_matvec(&self, v: &[f64]) -> Vec<f64> {
        self.matvec(&self.tr_matvec(v))
    }

    /// `C^{-1} v`.
    pub fn inv_matvec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Preconditioner::Diagonal(s) => s
                .iter()
                .zip(v)
                .map(|(s, v)| (-s).exp() * v)
                .collect(),
            Preconditioner::LowerTriangular(l) => l.solve_lower(v),
        }
    }

    /// `C^{-T} v`.
    pub fn inv_tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Preconditioner::Diagonal(s) => s
                .iter()
                .zip(v)
                .map(|(s, v)| (-s).exp() * v)
                .collect(),
            Preconditioner::LowerTriangular(l) => l.solve_upper_tr(v),
        }
    }

    /// `log|det C|`; exact from the log-space storage.
    pub fn log_det(&self) -> f64 {
        match self {
            Preconditioner::Diagonal(s) => s.iter().sum(),
            Preconditioner::LowerTriangular(l) => l.log_det(),
        }
    }

    pub fn realize(&self) -> DenseMatrix {
        match self {
            Preconditioner::Diagonal(s) => {
                DenseMatrix::diag(&s.iter().map(|v| v.exp()).collect::<Vec<_>>())
            }
            Preconditioner::LowerTriangular(l) => l.realize(),
        }
    }

    /// Realized diagonal entry.
    pub fn diag_entry(&self, i: usize) -> f64 {
        match self {
            Preconditioner::Diagonal(s) => s[i].exp(),
            Preconditioner::LowerTriangular(l) => l.diag(i),
        }
    }

    /// Sets every stored log-diagonal to `log_scale` (used by the
    /// dual-averaging adapter, which tunes a single scalar step).
    pub fn set_uniform_log_scale(&mut self, log_scale: f64) {
        match self {
            Preconditioner::Diagonal(s) => s.iter_mut().for_each(|v| *v = log_scale),
            Preconditioner::LowerTriangular(l) => {
                l.strict_mut().iter_mut().for_each(|v| *v = 0.0);
                l.log_diag_mut().iter_mut().for_each(|v| *v = log_scale);
            }
        }
    }
}

/// Which proposal family a kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Mala,
    Hmc,
}

/// Adaptable proposal parameters plus the entropy weight.
///
/// `log_h` is the MALA step size in log-space. HMC carries no separate
/// step size: the leapfrog runs with unit steps and the scale lives in
/// `C` (the proposal representation has no redundant `h`).
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub kind: KernelKind,
    pub log_h: f64,
    pub precond: Preconditioner,
    /// Leapfrog step count (HMC only), >= 1.
    pub leapfrog: usize,
    /// Entropy weight in the speed measure, > 0.
    pub beta: f64,
    /// Target acceptance rate in (0, 1).
    pub target_accept: f64,
}

impl KernelParams {
    /// MALA defaults: `h = 0.1`, identity diagonal preconditioner, unit
    /// entropy weight, the 0.574 optimal-scaling target rate.
    pub fn mala(dim: usize) -> Self {
        KernelParams {
            kind: KernelKind::Mala,
            log_h: (0.1f64).ln(),
            precond: Preconditioner::identity_diagonal(dim),
            leapfrog: 1,
            beta: 1.0,
            target_accept: 0.574,
        }
    }

    /// HMC defaults: scale 0.1 absorbed into a diagonal `C`, `L` leapfrog
    /// steps, unit entropy weight, the 0.65 target rate.
    pub fn hmc(dim: usize, leapfrog: usize) -> Self {
        assert!(leapfrog >= 1);
        KernelParams {
            kind: KernelKind::Hmc,
            log_h: 0.0,
            precond: Preconditioner::Diagonal(vec![(0.1f64).ln(); dim]),
            leapfrog,
            beta: 1.0,
            target_accept: 0.65,
        }
    }

    pub fn with_lower_triangular(mut self) -> Self {
        let dim = self.precond.dim();
        let mut l = LowerTriangularFactor::identity(dim);
        if let Preconditioner::Diagonal(s) = &self.precond {
            l.log_diag_mut().copy_from_slice(s);
        }
        self.precond = Preconditioner::LowerTriangular(l);
        self
    }

    pub fn dim(&self) -> usize {
        self.precond.dim()
    }

    /// Realized MALA step size.
    pub fn step_size(&self) -> f64 {
        self.log_h.exp()
    }
}
