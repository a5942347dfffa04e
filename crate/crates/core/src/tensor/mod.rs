//! Images as flat `f64` tensors, plus kernels, noise, metrics and file IO.
//!
//! Every operator in the crate works on channel-major flat buffers
//! (`channels × height × width`, row-major within a channel). [`Image`] pairs
//! such a buffer with its [`Shape`]; most numerical code borrows the slice
//! directly and keeps the shape alongside.

mod io;
mod kernel;
mod metrics;
mod noise;
pub mod vecops;

pub use io::{read_image, write_image};
pub use kernel::{gaussian_kernel, Kernel2D};
pub use metrics::{mse, psnr, PSNR_CAP_DB};
pub use noise::{add_awgn, standard_normal_vec, RngSeed};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid shape {0}: every dimension must be at least 1")]
    InvalidShape(Shape),
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        expected: usize,
        len: usize,
    },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("negative noise level {0}")]
    NegativeSigma(f64),
    #[error("unsupported channel count {0} for 8-bit export (need 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

/// Tensor dimensions `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self, TensorError> {
        let shape = Self {
            channels,
            height,
            width,
        };
        if channels == 0 || height == 0 || width == 0 {
            return Err(TensorError::InvalidShape(shape));
        }
        Ok(shape)
    }

    /// A plain vector in `R^n`, stored as a `1 × 1 × n` tensor.
    pub fn vector(n: usize) -> Self {
        Self {
            channels: 1,
            height: 1,
            width: n.max(1),
        }
    }

    pub fn gray(height: usize, width: usize) -> Self {
        Self {
            channels: 1,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A real-valued `channels × height × width` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = Shape::new(shape.channels, shape.height, shape.width)?;
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.len(),
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        let s = self.shape;
        self.data[(channel * s.height + row) * s.width + col]
    }

    fn check_same(&self, other: &Image) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape,
                found: other.shape,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Image) -> Result<Image, TensorError> {
        self.check_same(other)?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Image) -> Result<Image, TensorError> {
        self.check_same(other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn scale(&self, factor: f64) -> Image {
        self.map(|v| v * factor)
    }

    pub fn offset(&self, delta: f64) -> Image {
        self.map(|v| v + delta)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Image) -> Result<f64, TensorError> {
        self.check_same(other)?;
        Ok(vecops::dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        vecops::norm(&self.data)
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}
