use super::TensorError;

/// A square, odd-sized 2-D convolution kernel stored row-major.
///
/// Kernels built by [`gaussian_kernel`] also remember their 1-D factor so the
/// blur operator can take the separable path.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
    separable: Option<Vec<f64>>,
}

impl Kernel2D {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self, TensorError> {
        if size == 0 || size % 2 == 0 {
            return Err(TensorError::InvalidKernel(format!(
                "size must be odd and positive, got {size}"
            )));
        }
        if weights.len() != size * size {
            return Err(TensorError::InvalidKernel(format!(
                "expected {} weights for a {size}x{size} kernel, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(TensorError::InvalidKernel("non-finite weight".into()));
        }
        Ok(Self {
            size,
            weights,
            separable: None,
        })
    }

    /// The 1×1 kernel `[[1]]`.
    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
            separable: Some(vec![1.0]),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    /// 1-D factor `f` with `weights[i][j] == f[i] * f[j]`, when known.
    pub fn separable_factor(&self) -> Option<&[f64]> {
        self.separable.as_deref()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Kernel rotated by 180 degrees.
    pub fn flipped(&self) -> Self {
        let mut weights = self.weights.clone();
        weights.reverse();
        Self {
            size: self.size,
            weights,
            separable: self.separable.as_ref().map(|f| {
                let mut f = f.clone();
                f.reverse();
                f
            }),
        }
    }
}

/// Normalized, centered, separable Gaussian kernel of odd `size`.
pub fn gaussian_kernel(size: usize, std: f64) -> Result<Kernel2D, TensorError> {
    if size == 0 || size % 2 == 0 {
        return Err(TensorError::InvalidKernel(format!(
            "size must be odd and positive, got {size}"
        )));
    }
    if !(std > 0.0) || !std.is_finite() {
        return Err(TensorError::InvalidKernel(format!(
            "standard deviation must be positive, got {std}"
        )));
    }
    let center = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * std * std)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    let factor: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let mut weights = Vec::with_capacity(size * size);
    for a in &factor {
        for b in &factor {
            weights.push(a * b);
        }
    }
    Ok(Kernel2D {
        size,
        weights,
        separable: Some(factor),
    })
}
