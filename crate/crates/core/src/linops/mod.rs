//! Linear operators with exact adjoints.
//!
//! Operators act on flat channel-major buffers. Every image operator works on
//! each channel independently. `apply`/`adjoint` panic on a length mismatch
//! (a programming error inside the crate); the `try_` variants report it.

mod bicubic;
mod blur;
mod decimation;

pub use bicubic::{keys_cubic, BicubicDownsample};
pub use blur::Blur;
pub use decimation::Decimation;

use crate::dense;
use crate::tensor::{Image, Kernel2D, Shape};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Largest domain dimension [`materialize`] accepts by default.
pub const DEFAULT_MATERIALIZE_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("kernel of size {kernel} does not fit a {height}x{width} image")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },
    #[error("image {height}x{width} is not divisible by factor {factor}")]
    NotDivisible {
        factor: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid factor {0}")]
    InvalidFactor(usize),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("vector of length {found} does not match operator dimension {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("materialization cap exceeded: domain dimension {dim} > {cap}")]
    CapExceeded { dim: usize, cap: usize },
    #[error("matrix is {rows}x{cols} but shapes need {range}x{domain}")]
    MatrixShape {
        rows: usize,
        cols: usize,
        range: usize,
        domain: usize,
    },
}

/// A linear map `R^n -> R^m` together with its transpose.
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn domain_shape(&self) -> Shape;
    fn range_shape(&self) -> Shape;
    /// `out = Op(x)`; `out` is fully overwritten.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);
    /// `out = Op^T(y)`; `out` is fully overwritten.
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]);

    fn domain_dim(&self) -> usize {
        self.domain_shape().len()
    }

    fn range_dim(&self) -> usize {
        self.range_shape().len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.domain_dim(), "operator input length");
        let mut out = vec![0.0; self.range_dim()];
        self.apply_into(x, &mut out);
        out
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.range_dim(), "adjoint input length");
        let mut out = vec![0.0; self.domain_dim()];
        self.adjoint_into(y, &mut out);
        out
    }

    /// `Op^T Op x`
    fn normal(&self, x: &[f64]) -> Vec<f64> {
        self.adjoint(&self.apply(x))
    }

    fn try_apply(&self, x: &[f64]) -> Result<Vec<f64>, OperatorError> {
        check_len(self.domain_dim(), x.len())?;
        Ok(self.apply(x))
    }

    fn try_adjoint(&self, y: &[f64]) -> Result<Vec<f64>, OperatorError> {
        check_len(self.range_dim(), y.len())?;
        Ok(self.adjoint(y))
    }

    fn apply_image(&self, x: &Image) -> Result<Image, OperatorError> {
        if x.shape() != self.domain_shape() {
            return Err(OperatorError::ShapeMismatch {
                expected: self.domain_shape(),
                found: x.shape(),
            });
        }
        Ok(Image::new(self.range_shape(), self.apply(x.as_slice())).expect("range shape"))
    }

    fn adjoint_image(&self, y: &Image) -> Result<Image, OperatorError> {
        if y.shape() != self.range_shape() {
            return Err(OperatorError::ShapeMismatch {
                expected: self.range_shape(),
                found: y.shape(),
            });
        }
        Ok(Image::new(self.domain_shape(), self.adjoint(y.as_slice())).expect("domain shape"))
    }
}

/// Shared, immutable operator handle.
pub type OperatorRef = Arc<dyn LinearOperator>;

fn check_len(expected: usize, found: usize) -> Result<(), OperatorError> {
    if expected != found {
        return Err(OperatorError::LengthMismatch { expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Identity {
    shape: Shape,
}

impl Identity {
    pub fn new(shape: Shape) -> Self {
        Self { shape }
    }
}

impl LinearOperator for Identity {
    fn domain_shape(&self) -> Shape {
        self.shape
    }
    fn range_shape(&self) -> Shape {
        self.shape
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// `outer ∘ inner`.
#[derive(Debug, Clone)]
pub struct Composed {
    outer: OperatorRef,
    inner: OperatorRef,
}

impl Composed {
    pub fn new(outer: OperatorRef, inner: OperatorRef) -> Result<Self, OperatorError> {
        if inner.range_shape() != outer.domain_shape() {
            return Err(OperatorError::ShapeMismatch {
                expected: outer.domain_shape(),
                found: inner.range_shape(),
            });
        }
        Ok(Self { outer, inner })
    }
}

impl LinearOperator for Composed {
    fn domain_shape(&self) -> Shape {
        self.inner.domain_shape()
    }
    fn range_shape(&self) -> Shape {
        self.outer.range_shape()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mid = self.inner.apply(x);
        self.outer.apply_into(&mid, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let mid = self.outer.adjoint(y);
        self.inner.adjoint_into(&mid, out);
    }
}

/// Composes two operators, checking that the shapes chain.
pub fn compose(outer: OperatorRef, inner: OperatorRef) -> Result<OperatorRef, OperatorError> {
    Ok(Arc::new(Composed::new(outer, inner)?))
}

/// An explicit dense matrix acting as an operator.
#[derive(Debug, Clone)]
pub struct MatrixOperator {
    matrix: DMatrix<f64>,
    domain: Shape,
    range: Shape,
}

impl MatrixOperator {
    /// Treats `matrix` as a map between plain vectors.
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let domain = Shape::vector(matrix.ncols());
        let range = Shape::vector(matrix.nrows());
        Self {
            matrix,
            domain,
            range,
        }
    }

    pub fn with_shapes(
        matrix: DMatrix<f64>,
        domain: Shape,
        range: Shape,
    ) -> Result<Self, OperatorError> {
        if matrix.nrows() != range.len() || matrix.ncols() != domain.len() {
            return Err(OperatorError::MatrixShape {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
                range: range.len(),
                domain: domain.len(),
            });
        }
        Ok(Self {
            matrix,
            domain,
            range,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for MatrixOperator {
    fn domain_shape(&self) -> Shape {
        self.domain
    }
    fn range_shape(&self) -> Shape {
        self.range
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let v = &self.matrix * DVector::from_column_slice(x);
        out.copy_from_slice(v.as_slice());
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let v = self.matrix.tr_mul(&DVector::from_column_slice(y));
        out.copy_from_slice(v.as_slice());
    }
}

pub fn identity(shape: Shape) -> OperatorRef {
    Arc::new(Identity::new(shape))
}

pub fn blur_operator(kernel: &Kernel2D, shape: Shape) -> Result<OperatorRef, OperatorError> {
    Ok(Arc::new(Blur::new(kernel.clone(), shape)?))
}

pub fn decimation_operator(factor: usize, shape: Shape) -> Result<OperatorRef, OperatorError> {
    Ok(Arc::new(Decimation::new(factor, shape)?))
}

pub fn bicubic_downsample_operator(
    factor: usize,
    shape: Shape,
) -> Result<OperatorRef, OperatorError> {
    Ok(Arc::new(BicubicDownsample::new(factor, shape)?))
}

/// Dense matrix whose column `j` is `Op(e_j)`.
pub fn materialize(op: &dyn LinearOperator) -> Result<DMatrix<f64>, OperatorError> {
    materialize_with_cap(op, DEFAULT_MATERIALIZE_CAP)
}

pub fn materialize_with_cap(
    op: &dyn LinearOperator,
    cap: usize,
) -> Result<DMatrix<f64>, OperatorError> {
    let n = op.domain_dim();
    if n > cap {
        return Err(OperatorError::CapExceeded { dim: n, cap });
    }
    let m = op.range_dim();
    let mut out = DMatrix::zeros(m, n);
    let mut basis = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        basis[j] = 1.0;
        op.apply_into(&basis, &mut col);
        out.column_mut(j).copy_from_slice(&col);
        basis[j] = 0.0;
    }
    Ok(out)
}

/// Dense `Op^T Op`, built from the materialized operator.
pub fn gram_matrix(op: &dyn LinearOperator) -> Result<DMatrix<f64>, OperatorError> {
    let m = materialize(op)?;
    Ok(m.tr_mul(&m))
}

/// `(mu, lambda)`: extreme eigenvalues of `Op^T Op`.
///
/// Eigenvalues within `1e-12 * lambda` of zero are reported as exactly zero,
/// so rank-deficient operators give `mu == 0`.
pub fn spectrum_bounds(op: &dyn LinearOperator) -> Result<(f64, f64), OperatorError> {
    let gram = gram_matrix(op)?;
    let (lo, hi) = dense::symmetric_extreme_eigenvalues(&gram);
    let lo = if lo.abs() <= 1e-12 * hi.abs().max(1.0) {
        0.0
    } else {
        lo
    };
    Ok((lo, hi))
}
