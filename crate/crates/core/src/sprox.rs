//! Scaled proximal step for the least-squares data term `g(x) = ½‖Ax − y‖²`.
//!
//! The step solves the normal equations
//!
//! ```text
//! (AᵀA + γ HᵀH) x = Aᵀy + γ HᵀH z
//! ```
//!
//! which cover deblurring (`A = K`), super-resolution (`A = SK`) and
//! denoising (`A = I`). `γ` here weights the `HᵀH` seminorm, so it is the
//! reciprocal of the outer step size: the proximal subproblem
//! `argmin ½‖x − z‖²_{HᵀH} + t·g(x)` corresponds to `γ = 1/t`.

use crate::linops::{LinearOperator, OperatorError};
use crate::tensor::vecops;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxError {
    #[error("conjugate gradient diverged at iteration {iteration} (indefinite or singular system)")]
    Divergence { iteration: usize },
    #[error("invalid CG configuration: {0}")]
    Config(String),
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgConfig {
    pub max_iters: usize,
    /// Stop once `‖r‖ ≤ residual_tol · ‖rhs‖`; zero means a fixed iteration count.
    pub residual_tol: f64,
    pub warm_start: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 3,
            residual_tol: 0.0,
            warm_start: true,
        }
    }
}

impl CgConfig {
    /// Effectively exact solves for small verification problems.
    pub fn converged(dim: usize) -> Self {
        Self {
            max_iters: 20 * dim.max(1),
            residual_tol: 1e-14,
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<(), ProxError> {
        if self.max_iters == 0 {
            return Err(ProxError::Config("max_iters must be at least 1".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(ProxError::Config(format!(
                "residual_tol must be nonnegative, got {}",
                self.residual_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Plain conjugate gradient on a symmetric positive (semi)definite map.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    x0: &[f64],
    cfg: &CgConfig,
) -> Result<CgOutcome, ProxError> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let ax = apply(&x);
    let mut r = vecops::sub(rhs, &ax);
    let mut p = r.clone();
    let mut rr = vecops::norm_sq(&r);
    let threshold = cfg.residual_tol * vecops::norm(rhs);
    let mut iterations = 0;
    if !rr.is_finite() {
        return Err(ProxError::Divergence { iteration: 0 });
    }
    while iterations < cfg.max_iters && rr.sqrt() > threshold {
        let ap = apply(&p);
        let curvature = vecops::dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(ProxError::Divergence {
                iteration: iterations,
            });
        }
        let step = rr / curvature;
        vecops::axpy(step, &p, &mut x);
        vecops::axpy(-step, &ap, &mut r);
        let rr_next = vecops::norm_sq(&r);
        iterations += 1;
        if !rr_next.is_finite() || !vecops::all_finite(&x) {
            return Err(ProxError::Divergence {
                iteration: iterations,
            });
        }
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    Ok(CgOutcome {
        solution: x,
        iterations,
        residual_norm: rr.sqrt(),
    })
}

/// Data `(A, y)`, prior degradation `H` and seminorm weight `γ`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledProxProblem<'a> {
    a: &'a dyn LinearOperator,
    h: &'a dyn LinearOperator,
    y: &'a [f64],
    gamma: f64,
}

impl<'a> ScaledProxProblem<'a> {
    pub fn new(
        a: &'a dyn LinearOperator,
        h: &'a dyn LinearOperator,
        y: &'a [f64],
        gamma: f64,
    ) -> Result<Self, ProxError> {
        if a.domain_shape() != h.domain_shape() {
            return Err(OperatorError::ShapeMismatch {
                expected: a.domain_shape(),
                found: h.domain_shape(),
            }
            .into());
        }
        if y.len() != a.range_dim() {
            return Err(OperatorError::LengthMismatch {
                expected: a.range_dim(),
                found: y.len(),
            }
            .into());
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(ProxError::InvalidGamma(gamma));
        }
        Ok(Self { a, h, y, gamma })
    }

    pub fn dim(&self) -> usize {
        self.a.domain_dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn measurement(&self) -> &'a dyn LinearOperator {
        self.a
    }

    pub fn degradation(&self) -> &'a dyn LinearOperator {
        self.h
    }

    pub fn observation(&self) -> &'a [f64] {
        self.y
    }

    /// Normal equations for the prox centered at `z`.
    pub fn normal_equations(&self, z: &[f64]) -> Result<NormalEquations<'a>, ProxError> {
        if z.len() != self.dim() {
            return Err(OperatorError::LengthMismatch {
                expected: self.dim(),
                found: z.len(),
            }
            .into());
        }
        let mut rhs = self.a.adjoint(self.y);
        vecops::axpy(self.gamma, &self.h.normal(z), &mut rhs);
        Ok(NormalEquations {
            problem: *self,
            rhs,
        })
    }

    /// `Aᵀ(Ax − y) + γ HᵀH(x − z)`; zero at the exact prox.
    pub fn stationarity_residual(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut r = self.a.adjoint(&vecops::sub(&self.a.apply(x), self.y));
        vecops::axpy(self.gamma, &self.h.normal(&vecops::sub(x, z)), &mut r);
        r
    }
}

/// `v ↦ (AᵀA + γHᵀH) v` with its right-hand side.
#[derive(Debug, Clone)]
pub struct NormalEquations<'a> {
    problem: ScaledProxProblem<'a>,
    pub rhs: Vec<f64>,
}

impl NormalEquations<'_> {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.problem.a.normal(v);
        vecops::axpy(self.problem.gamma, &self.problem.h.normal(v), &mut out);
        out
    }
}

/// Approximate scaled prox at `z` by CG, started at `x_warm` when warm
/// starting is enabled and at zero otherwise.
pub fn sprox(
    problem: &ScaledProxProblem<'_>,
    z: &[f64],
    x_warm: &[f64],
    cfg: &CgConfig,
) -> Result<Vec<f64>, ProxError> {
    let eqs = problem.normal_equations(z)?;
    if x_warm.len() != problem.dim() {
        return Err(OperatorError::LengthMismatch {
            expected: problem.dim(),
            found: x_warm.len(),
        }
        .into());
    }
    let zeros;
    let x0 = if cfg.warm_start {
        x_warm
    } else {
        zeros = vec![0.0; problem.dim()];
        &zeros
    };
    Ok(conjugate_gradient(|v| eqs.apply(v), &eqs.rhs, x0, cfg)?.solution)
}
