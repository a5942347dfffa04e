//! Restoration operators `R: R^p -> R^n`.
//!
//! [`GaussianPriorModel`] gives the exact MMSE restorer for a Gaussian prior
//! together with the closed-form observation density, implicit regularizer
//! and its gradient. [`ExternalRestorer`] forwards to a peer process over the
//! binary protocol in [`protocol`].

mod external;
mod gaussian;
pub mod protocol;

pub use external::{Endpoint, ExternalRestorer, DEFAULT_TIMEOUT};
pub use gaussian::{squared_exponential_covariance, GaussianPriorModel, GaussianRestorer};
pub use protocol::ProtocolError;

use crate::linops::OperatorError;
use crate::tensor::Shape;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("{what} has dimension {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("noise standard deviation must be positive and finite, got {0}")]
    InvalidNoise(f64),
    #[error("restorer input has {found} values, expected {expected}")]
    InputLength { expected: usize, found: usize },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// A restoration operator mapping degraded observations to estimates.
///
/// `restore` takes `&mut self` because out-of-process restorers hold a
/// connection with one request in flight at a time.
pub trait Restorer: Send {
    fn input_shape(&self) -> Shape;
    fn output_shape(&self) -> Shape;
    fn restore(&mut self, s: &[f64]) -> Result<Vec<f64>, PriorError>;

    /// The analytic model behind this restorer, when there is one.
    fn gaussian_model(&self) -> Option<&GaussianPriorModel> {
        None
    }
}

/// `R(s) = s`; only meaningful when `p == n`.
#[derive(Debug, Clone)]
pub struct IdentityRestorer {
    shape: Shape,
}

impl IdentityRestorer {
    pub fn new(shape: Shape) -> Self {
        Self { shape }
    }
}

impl Restorer for IdentityRestorer {
    fn input_shape(&self) -> Shape {
        self.shape
    }
    fn output_shape(&self) -> Shape {
        self.shape
    }
    fn restore(&mut self, s: &[f64]) -> Result<Vec<f64>, PriorError> {
        check_input(self.shape.len(), s)?;
        Ok(s.to_vec())
    }
}

/// A restoration task `s = Hx + n`, `n ~ N(0, sigma^2 I)`.
#[derive(Debug, Clone)]
pub struct RestorationTask {
    pub degradation: crate::linops::OperatorRef,
    pub sigma: f64,
}

impl RestorationTask {
    pub fn new(degradation: crate::linops::OperatorRef, sigma: f64) -> Result<Self, PriorError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(PriorError::InvalidNoise(sigma));
        }
        Ok(Self { degradation, sigma })
    }
}

pub(crate) fn check_input(expected: usize, s: &[f64]) -> Result<(), PriorError> {
    if s.len() != expected {
        return Err(PriorError::InputLength {
            expected,
            found: s.len(),
        });
    }
    Ok(())
}
