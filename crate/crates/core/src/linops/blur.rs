use super::{LinearOperator, OperatorError};
use crate::tensor::{Kernel2D, Shape};

/// Periodic 2-D convolution with a fixed kernel, per channel.
///
/// `out[i, j] = sum_{u, v} k[u, v] * x[(i + r - u) mod H, (j + r - v) mod W]`
/// with `r` the kernel radius. The adjoint is correlation with the same
/// kernel, i.e. convolution with the kernel rotated by 180 degrees.
#[derive(Debug, Clone)]
pub struct Blur {
    kernel: Kernel2D,
    flipped: Kernel2D,
    shape: Shape,
}

impl Blur {
    pub fn new(kernel: Kernel2D, shape: Shape) -> Result<Self, OperatorError> {
        if kernel.size() > shape.height || kernel.size() > shape.width {
            return Err(OperatorError::KernelTooLarge {
                kernel: kernel.size(),
                height: shape.height,
                width: shape.width,
            });
        }
        let flipped = kernel.flipped();
        Ok(Self {
            kernel,
            flipped,
            shape,
        })
    }

    pub fn kernel(&self) -> &Kernel2D {
        &self.kernel
    }
}

impl LinearOperator for Blur {
    fn domain_shape(&self) -> Shape {
        self.shape
    }
    fn range_shape(&self) -> Shape {
        self.shape
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        convolve_periodic(&self.kernel, self.shape, x, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        convolve_periodic(&self.flipped, self.shape, y, out);
    }
}

fn convolve_periodic(kernel: &Kernel2D, shape: Shape, x: &[f64], out: &mut [f64]) {
    let plane = shape.plane_len();
    for (src, dst) in x.chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
        match kernel.separable_factor() {
            Some(f) => separable_plane(f, shape.height, shape.width, src, dst),
            None => dense_plane(kernel, shape.height, shape.width, src, dst),
        }
    }
}

fn dense_plane(kernel: &Kernel2D, h: usize, w: usize, src: &[f64], dst: &mut [f64]) {
    let k = kernel.size();
    let r = kernel.radius();
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for u in 0..k {
                // (i + r - u) mod h, computed without underflow
                let row = (i + r + h * k - u) % h;
                let src_row = &src[row * w..(row + 1) * w];
                for v in 0..k {
                    let col = (j + r + w * k - v) % w;
                    acc += kernel.at(u, v) * src_row[col];
                }
            }
            dst[i * w + j] = acc;
        }
    }
}

fn separable_plane(f: &[f64], h: usize, w: usize, src: &[f64], dst: &mut [f64]) {
    let k = f.len();
    let r = k / 2;
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        let row = &src[i * w..(i + 1) * w];
        for j in 0..w {
            let mut acc = 0.0;
            for (v, fv) in f.iter().enumerate() {
                acc += fv * row[(j + r + w * k - v) % w];
            }
            tmp[i * w + j] = acc;
        }
    }
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (u, fu) in f.iter().enumerate() {
                acc += fu * tmp[((i + r + h * k - u) % h) * w + j];
            }
            dst[i * w + j] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::materialize;
    use crate::tensor::{gaussian_kernel, standard_normal_vec, vecops, RngSeed};

    #[test]
    fn identity_kernel_is_identity() {
        let s = Shape::new(2, 5, 4).unwrap();
        let op = Blur::new(Kernel2D::identity(), s).unwrap();
        let x = standard_normal_vec(s.len(), RngSeed(1));
        assert_eq!(op.apply(&x), x);
        assert_eq!(op.adjoint(&x), x);
    }

    #[test]
    fn constants_are_preserved() {
        let s = Shape::gray(16, 12);
        let op = Blur::new(gaussian_kernel(7, 1.6).unwrap(), s).unwrap();
        for v in op.apply(&vec![0.37; s.len()]) {
            assert!((v - 0.37).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_explicit_circulant_matrix() {
        // Oracle: build the 64x64 matrix entry by entry from the convolution sum.
        let s = Shape::gray(8, 8);
        let kernel = gaussian_kernel(3, 1.0).unwrap();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(64, 64);
        for i in 0..8i64 {
            for j in 0..8i64 {
                for u in 0..3i64 {
                    for v in 0..3i64 {
                        let si = (i - (u - 1)).rem_euclid(8);
                        let sj = (j - (v - 1)).rem_euclid(8);
                        dense[((i * 8 + j) as usize, (si * 8 + sj) as usize)] +=
                            kernel.at(u as usize, v as usize);
                    }
                }
            }
        }
        let op = Blur::new(kernel, s).unwrap();
        let x = standard_normal_vec(64, RngSeed(3));
        let expected = &dense * nalgebra::DVector::from_vec(x.clone());
        for (a, b) in op.apply(&x).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((materialize(&op).unwrap() - dense).abs().max() < 1e-15);
    }

    #[test]
    fn separable_and_dense_paths_agree() {
        let s = Shape::new(3, 9, 11).unwrap();
        let sep = gaussian_kernel(5, 1.2).unwrap();
        let dense = Kernel2D::new(5, sep.weights().to_vec()).unwrap();
        assert!(dense.separable_factor().is_none());
        let a = Blur::new(sep, s).unwrap();
        let b = Blur::new(dense, s).unwrap();
        let x = standard_normal_vec(s.len(), RngSeed(5));
        let d = vecops::dist_sq(&a.apply(&x), &b.apply(&x)).sqrt();
        assert!(d < 1e-13);
        let d = vecops::dist_sq(&a.adjoint(&x), &b.adjoint(&x)).sqrt();
        assert!(d < 1e-13);
    }

    #[test]
    fn asymmetric_kernel_adjoint() {
        let s = Shape::new(2, 6, 7).unwrap();
        let weights: Vec<f64> = (0..9).map(|i| (i * i) as f64 * 0.1 - 0.3).collect();
        let op = Blur::new(Kernel2D::new(3, weights).unwrap(), s).unwrap();
        crate::linops::tests::assert_adjoint(&op, 100, 21);
    }

    #[test]
    fn oversized_kernel_rejected() {
        let err = Blur::new(gaussian_kernel(25, 1.6).unwrap(), Shape::gray(16, 64)).unwrap_err();
        assert!(matches!(err, OperatorError::KernelTooLarge { .. }));
    }
}
