//! Executable checks of the convergence theory in the Gaussian setting,
//! where `g` and `h` are both quadratic and every quantity is closed-form.

use crate::dense::{self, SpdFactor};
use crate::linops::{materialize, DEFAULT_MATERIALIZE_CAP, spectrum_bounds, LinearOperator, OperatorError};
use crate::priors::{GaussianPriorModel, PriorError};
use crate::solver::{ConvergenceTrace, DataFidelity};
use crate::tensor::{standard_normal_vec, vecops, RngSeed};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("trace has no {0} column")]
    MissingColumn(&'static str),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("alpha must exceed 1, got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Largest relative gap between `τHᵀH(x − R(Hx))` and `∇h(x)` over random `x`.
pub fn check_tweedie(
    model: &GaussianPriorModel,
    tau: f64,
    trials: usize,
    seed: RngSeed,
) -> Result<f64, PriorError> {
    let mut worst: f64 = 0.0;
    for t in 0..trials as u64 {
        let mut x = standard_normal_vec(model.n(), seed.derive(t));
        vecops::axpy(1.0, model.mean(), &mut x);
        worst = worst.max(tweedie_gap(model, tau, &x)?);
    }
    Ok(worst)
}

/// Relative Tweedie gap at a single point.
pub fn tweedie_gap(model: &GaussianPriorModel, tau: f64, x: &[f64]) -> Result<f64, PriorError> {
    let h = model.degradation();
    let restored = model.restore(&h.apply(x))?;
    let lhs = vecops::scaled(tau, &h.normal(&vecops::sub(x, &restored)));
    let rhs = model.grad_implicit_regularizer(tau, x)?;
    let gap = vecops::dist_sq(&lhs, &rhs).sqrt();
    if gap == 0.0 {
        return Ok(0.0);
    }
    Ok(gap / (vecops::norm(&rhs) + 1e-300))
}

/// Iterations where `f(x^k) ≤ f(x^{k−1}) − (α−1)(L/2)‖x^k − x^{k−1}‖²`
/// fails by more than `1e-9 (1 + |f(x^{k−1})|)`.
///
/// Only consecutive iterations under the same stage are compared; the
/// objective changes definition when the prior switches.
pub fn check_descent(trace: &ConvergenceTrace, lipschitz: f64, alpha: f64) -> Result<usize, TheoryError> {
    let mut violations = 0;
    let mut prev = trace.initial_objective;
    let mut prev_stage = trace.entries.first().map(|e| e.stage);
    for e in &trace.entries {
        let f = e.objective.ok_or(TheoryError::MissingColumn("objective"))?;
        let f_prev = if Some(e.stage) == prev_stage { prev } else { None };
        if let Some(fp) = f_prev {
            let bound = fp - (alpha - 1.0) * 0.5 * lipschitz * e.iterate_change;
            if f > bound + 1e-9 * (1.0 + fp.abs()) {
                violations += 1;
            }
        }
        prev = Some(f);
        prev_stage = Some(e.stage);
    }
    if trace.initial_objective.is_none() && !trace.entries.is_empty() {
        return Err(TheoryError::MissingColumn("initial objective"));
    }
    Ok(violations)
}

/// `2L(α(λ/μ) + 1)²/(α − 1)`.
pub fn rate_constant(lipschitz: f64, alpha: f64, mu: f64, lambda: f64) -> Result<f64, TheoryError> {
    if !(alpha > 1.0) {
        return Err(TheoryError::InvalidAlpha(alpha));
    }
    let a1 = (lipschitz * (alpha * (lambda / mu) + 1.0)).powi(2);
    Ok(2.0 * a1 / (lipschitz * (alpha - 1.0)))
}

/// Both sides of the running-minimum rate bound for every `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub constant: f64,
    /// `min_{k ≤ t} ‖w(x^k)‖²`.
    pub lhs: Vec<f64>,
    /// `C (f(x^0) − f*) / t`.
    pub rhs: Vec<f64>,
    pub holds: Vec<bool>,
}

impl RateCheck {
    pub fn all_hold(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }
}

pub fn check_rate(trace: &ConvergenceTrace, f_star: f64, constant: f64) -> Result<RateCheck, TheoryError> {
    let f0 = trace
        .initial_objective
        .ok_or(TheoryError::MissingColumn("initial objective"))?;
    let gap = f0 - f_star;
    let mut running = f64::INFINITY;
    let mut out = RateCheck {
        constant,
        lhs: Vec::with_capacity(trace.len()),
        rhs: Vec::with_capacity(trace.len()),
        holds: Vec::with_capacity(trace.len()),
    };
    for (t, e) in trace.entries.iter().enumerate() {
        let w = e.subgrad_norm.ok_or(TheoryError::MissingColumn("subgrad_norm"))?;
        running = running.min(w * w);
        let rhs = constant * gap / (t + 1) as f64;
        out.lhs.push(running);
        out.rhs.push(rhs);
        out.holds.push(running <= rhs * (1.0 + 1e-12) + 1e-300);
    }
    Ok(out)
}

/// Minimizer and minimum of `f = g + h`, from the dense system
/// `(AᵀA + Q) x = Aᵀy + Q m` with `Q` the Hessian of `h` and `m` the prior mean.
pub fn quadratic_minimizer(
    model: &GaussianPriorModel,
    data: &DataFidelity,
    tau: f64,
) -> Result<(Vec<f64>, f64), TheoryError> {
    let a = materialize(&**data.operator())?;
    let q = model.regularizer_hessian(tau)?;
    let mut system = a.tr_mul(&a) + &q;
    dense::symmetrize(&mut system);
    let rhs = a.tr_mul(&DVector::from_column_slice(data.observation()))
        + &q * DVector::from_column_slice(model.mean());
    let factor = SpdFactor::new(system).ok_or(TheoryError::NotPositiveDefinite("AᵀA + ∇²h"))?;
    let x = factor.solve(rhs.as_slice());
    let f = data.value(&x) + model.implicit_regularizer(tau, &x)?;
    Ok((x, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Prior covariance admits a Cholesky factor.
    pub prior_nondegenerate: bool,
    /// Least-squares `g` is convex, so its scaled prox is well defined.
    pub prox_well_defined: bool,
    pub data_term_lower_bound: f64,
    pub regularizer_lower_bound: f64,
    pub bounded_below: bool,
    /// Extreme eigenvalues of `HᵀH`.
    pub mu: f64,
    pub lambda: f64,
    /// Lipschitz constant of `∇h`.
    pub lipschitz: f64,
    /// `λ ≥ μ > 0`.
    pub degradation_well_conditioned: bool,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.prior_nondegenerate
            && self.prox_well_defined
            && self.bounded_below
            && self.degradation_well_conditioned
    }
}

pub fn audit_assumptions(
    model: &GaussianPriorModel,
    a: &dyn LinearOperator,
    tau: f64,
) -> Result<AssumptionReport, TheoryError> {
    if a.domain_dim() != model.n() {
        return Err(OperatorError::LengthMismatch {
            expected: model.n(),
            found: a.domain_dim(),
        }
        .into());
    }
    if a.domain_dim() > DEFAULT_MATERIALIZE_CAP {
        return Err(OperatorError::CapExceeded {
            dim: a.domain_dim(),
            cap: DEFAULT_MATERIALIZE_CAP,
        }
        .into());
    }
    let (mu, lambda) = spectrum_bounds(&**model.degradation())?;
    let lipschitz = model.lipschitz_constant(tau)?;
    let h_bound = model.regularizer_lower_bound(tau);
    Ok(AssumptionReport {
        prior_nondegenerate: dense::cholesky_lower(model.covariance().clone()).is_some(),
        prox_well_defined: true,
        data_term_lower_bound: 0.0,
        regularizer_lower_bound: h_bound,
        bounded_below: h_bound.is_finite(),
        mu,
        lambda,
        lipschitz,
        degradation_well_conditioned: mu > 0.0 && lambda >= mu,
    })
}

/// Aggregated evidence; absent fields were not applicable to the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub tweedie_max_rel_error: Option<f64>,
    pub descent_violations: Option<usize>,
    pub descent_iterations: Option<usize>,
    pub rate_constant_check: Option<RateCheck>,
    pub fixed_point_residual: Option<f64>,
    pub minimizer_rel_error: Option<f64>,
    pub assumption_audit: Option<AssumptionReport>,
}

impl TheoryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
