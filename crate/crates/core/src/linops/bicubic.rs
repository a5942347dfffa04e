use super::{LinearOperator, OperatorError};
use crate::tensor::Shape;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Sparse 1-D resampling matrix, one row of `(source index, weight)` taps per
/// output sample.
#[derive(Debug, Clone)]
struct Axis {
    taps: Vec<Vec<(usize, f64)>>,
}

impl Axis {
    /// Antialiased bicubic reduction of `len` samples by `factor`.
    ///
    /// Output sample `i` sits at input coordinate `(i + 0.5) * factor - 0.5`;
    /// the cubic is stretched by `factor`, taps falling outside the signal
    /// are mirrored (half-sample symmetric) and each row is normalized to 1.
    fn downsample(len: usize, factor: usize) -> Self {
        let q = factor as f64;
        let support = 2.0 * q;
        let taps = (0..len / factor)
            .map(|i| {
                let center = (i as f64 + 0.5) * q - 0.5;
                let lo = (center - support).floor() as i64;
                let hi = (center + support).ceil() as i64;
                let mut row: Vec<(usize, f64)> = Vec::new();
                for j in lo..=hi {
                    let w = keys_cubic((j as f64 - center) / q);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = mirror(j, len);
                    match row.iter_mut().find(|(k, _)| *k == idx) {
                        Some(entry) => entry.1 += w,
                        None => row.push((idx, w)),
                    }
                }
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();
        Self { taps }
    }
}

fn mirror(j: i64, len: usize) -> usize {
    let n = len as i64;
    let m = j.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Bicubic down-sampling by an integer factor `q >= 2`, per channel.
///
/// Separable: rows and columns are each reduced with the same 1-D
/// resampling matrix `R`, so the operator is `X -> R X R^T` and the adjoint
/// `Y -> R^T Y R` is its exact transpose.
#[derive(Debug, Clone)]
pub struct BicubicDownsample {
    factor: usize,
    domain: Shape,
    range: Shape,
    rows: Axis,
    cols: Axis,
}

impl BicubicDownsample {
    pub fn new(factor: usize, domain: Shape) -> Result<Self, OperatorError> {
        if factor < 2 {
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
            rows: Axis::downsample(domain.height, factor),
            cols: Axis::downsample(domain.width, factor),
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

impl LinearOperator for BicubicDownsample {
    fn domain_shape(&self) -> Shape {
        self.domain
    }
    fn range_shape(&self) -> Shape {
        self.range
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let (w, lh, lw) = (self.domain.width, self.range.height, self.range.width);
        let mut tmp = vec![0.0; self.domain.height * lw];
        for c in 0..self.domain.channels {
            let src = &x[c * self.domain.plane_len()..(c + 1) * self.domain.plane_len()];
            for (r, row) in src.chunks_exact(w).enumerate() {
                for (j, taps) in self.cols.taps.iter().enumerate() {
                    tmp[r * lw + j] = taps.iter().map(|&(k, wt)| wt * row[k]).sum();
                }
            }
            let dst = &mut out[c * self.range.plane_len()..(c + 1) * self.range.plane_len()];
            for (i, taps) in self.rows.taps.iter().enumerate() {
                for j in 0..lw {
                    dst[i * lw + j] = taps.iter().map(|&(k, wt)| wt * tmp[k * lw + j]).sum();
                }
            }
        }
        debug_assert_eq!(out.len(), lh * lw * self.domain.channels);
    }

    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let (h, w, lw) = (self.domain.height, self.domain.width, self.range.width);
        out.fill(0.0);
        let mut tmp = vec![0.0; h * lw];
        for c in 0..self.domain.channels {
            tmp.fill(0.0);
            let src = &y[c * self.range.plane_len()..(c + 1) * self.range.plane_len()];
            for (i, taps) in self.rows.taps.iter().enumerate() {
                for &(k, wt) in taps {
                    for j in 0..lw {
                        tmp[k * lw + j] += wt * src[i * lw + j];
                    }
                }
            }
            let dst = &mut out[c * self.domain.plane_len()..(c + 1) * self.domain.plane_len()];
            for r in 0..h {
                for (j, taps) in self.cols.taps.iter().enumerate() {
                    let v = tmp[r * lw + j];
                    for &(k, wt) in taps {
                        dst[r * w + k] += wt * v;
                    }
                }
            }
        }
    }
}
