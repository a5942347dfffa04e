//! Dense SPD factorization and symmetric spectra.
//!
//! nalgebra's own Cholesky is unblocked and becomes the bottleneck for the
//! 4096-dimensional priors, so the factorization here is left-looking and
//! blocked with the panel update done by GEMM.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

const BLOCK: usize = 64;

/// Lower Cholesky factor of `a`, or `None` if `a` is not positive definite.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky_lower(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut j = 0;
    while j < n {
        let b = BLOCK.min(n - j);
        if j > 0 {
            let (left, mut right) = a.columns_range_pair_mut(0..j, j..j + b);
            let panel = left.rows(j, n - j);
            let diag_t = left.rows(j, b).transpose();
            right.rows_mut(j, n - j).gemm(-1.0, &panel, &diag_t, 1.0);
        }
        for k in j..j + b {
            for m in j..k {
                let akm = a[(k, m)];
                if akm == 0.0 {
                    continue;
                }
                let (src, mut dst) = a.columns_range_pair_mut(m..m + 1, k..k + 1);
                for i in k..n {
                    dst[(i, 0)] -= src[(i, 0)] * akm;
                }
            }
            let pivot = a[(k, k)];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return None;
            }
            let d = pivot.sqrt();
            a[(k, k)] = d;
            for i in k + 1..n {
                a[(i, k)] /= d;
            }
        }
        j += b;
    }
    for c in 1..n {
        for r in 0..c {
            a[(r, c)] = 0.0;
        }
    }
    Some(a)
}

/// A factored symmetric positive-definite matrix `M = L L^T`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
}

impl SpdFactor {
    pub fn new(matrix: DMatrix<f64>) -> Option<Self> {
        cholesky_lower(matrix).map(|lower| Self { lower })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Solves `M v = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_column_slice(rhs);
        self.lower.solve_lower_triangular_mut(&mut v);
        self.lower.tr_solve_lower_triangular_mut(&mut v);
        v.data.into()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L v`; maps standard normal draws to `N(0, M)` samples.
    pub fn lower_mul(&self, v: &[f64]) -> Vec<f64> {
        (&self.lower * DVector::from_column_slice(v)).data.into()
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest eigenvalue and a unit eigenvector for it.
pub fn symmetric_top_eigenpair(m: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    (val, eig.eigenvectors.column(idx).iter().cloned().collect())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for c in 0..n {
        for r in c + 1..n {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}
