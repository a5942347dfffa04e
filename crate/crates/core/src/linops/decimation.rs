use super::{LinearOperator, OperatorError};
use crate::tensor::Shape;

/// `d`-fold down-sampling keeping pixels `(d*i, d*j)` (top-left phase).
///
/// The adjoint zero-fills back into those positions.
#[derive(Debug, Clone)]
pub struct Decimation {
    factor: usize,
    domain: Shape,
    range: Shape,
}

impl Decimation {
    pub fn new(factor: usize, domain: Shape) -> Result<Self, OperatorError> {
        if factor == 0 {
            return Err(OperatorError::InvalidFactor(factor));
        }
        if domain.height % factor != 0 || domain.width % factor != 0 {
            return Err(OperatorError::NotDivisible {
                factor,
                height: domain.height,
                width: domain.width,
            });
        }
        let range = Shape {
            channels: domain.channels,
            height: domain.height / factor,
            width: domain.width / factor,
        };
        Ok(Self {
            factor,
            domain,
            range,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

impl LinearOperator for Decimation {
    fn domain_shape(&self) -> Shape {
        self.domain
    }
    fn range_shape(&self) -> Shape {
        self.range
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let (d, w) = (self.factor, self.domain.width);
        let (lh, lw) = (self.range.height, self.range.width);
        for c in 0..self.domain.channels {
            let src = &x[c * self.domain.plane_len()..];
            let dst = &mut out[c * self.range.plane_len()..];
            for i in 0..lh {
                for j in 0..lw {
                    dst[i * lw + j] = src[(d * i) * w + d * j];
                }
            }
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let (d, w) = (self.factor, self.domain.width);
        let (lh, lw) = (self.range.height, self.range.width);
        for c in 0..self.domain.channels {
            let src = &y[c * self.range.plane_len()..];
            let dst = &mut out[c * self.domain.plane_len()..];
            for i in 0..lh {
                for j in 0..lw {
                    dst[(d * i) * w + d * j] = src[i * lw + j];
                }
            }
        }
    }
}
