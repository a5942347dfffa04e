//! The restoration-prior iteration
//!
//! ```text
//! z   = x − γτ (x − R(Hx))
//! x⁺  = argmin ½‖v − z‖²_{HᵀH} + γ g(v)
//! ```
//!
//! with a schedule that swaps `(R, H)` pairs at fixed iteration counts, and
//! the plug-and-play proximal-gradient baseline it generalizes.

use crate::linops::{spectrum_bounds, Identity, LinearOperator, OperatorError, OperatorRef};
use crate::priors::{GaussianPriorModel, GaussianRestorer, PriorError, Restorer};
use crate::sprox::{sprox, CgConfig, ProxError, ScaledProxProblem};
use crate::tensor::{vecops, Shape, PSNR_CAP_DB};
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    StageShape { stage: usize, message: String },
    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

impl SolverError {
    /// True when the failure came from the numerical iteration itself rather
    /// than from configuration or a peer.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            SolverError::Divergence { .. } | SolverError::Prox(ProxError::Divergence { .. })
        )
    }
}

/// A restoration operator paired with the degradation it was built for.
pub struct Prior {
    restorer: Box<dyn Restorer>,
    degradation: OperatorRef,
}

impl std::fmt::Debug for Prior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Prior")
            .field("input", &self.restorer.input_shape())
            .field("output", &self.restorer.output_shape())
            .field("degradation", &self.degradation)
            .finish()
    }
}

impl Prior {
    pub fn new(restorer: Box<dyn Restorer>, degradation: OperatorRef) -> Result<Self, SolverError> {
        if degradation.range_shape() != restorer.input_shape() {
            return Err(SolverError::Config(format!(
                "degradation produces {} but the restorer expects {}",
                degradation.range_shape(),
                restorer.input_shape()
            )));
        }
        if degradation.domain_shape() != restorer.output_shape() {
            return Err(SolverError::Config(format!(
                "degradation acts on {} but the restorer returns {}",
                degradation.domain_shape(),
                restorer.output_shape()
            )));
        }
        Ok(Self {
            restorer,
            degradation,
        })
    }

    pub fn gaussian(model: Arc<GaussianPriorModel>) -> Self {
        let degradation = model.degradation().clone();
        Self {
            restorer: Box::new(GaussianRestorer::new(model)),
            degradation,
        }
    }

    pub fn shape(&self) -> Shape {
        self.degradation.domain_shape()
    }

    pub fn degradation(&self) -> &OperatorRef {
        &self.degradation
    }

    pub fn gaussian_model(&self) -> Option<&GaussianPriorModel> {
        self.restorer.gaussian_model()
    }

    /// `G(x) = x − R(Hx)`.
    pub fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>, SolverError> {
        let restored = self.restorer.restore(&self.degradation.apply(x))?;
        Ok(vecops::sub(x, &restored))
    }
}

/// Least-squares data term `g(x) = ½‖Ax − y‖²`.
#[derive(Debug, Clone)]
pub struct DataFidelity {
    a: OperatorRef,
    y: Vec<f64>,
}

impl DataFidelity {
    pub fn new(a: OperatorRef, y: Vec<f64>) -> Result<Self, SolverError> {
        if y.len() != a.range_dim() {
            return Err(OperatorError::LengthMismatch {
                expected: a.range_dim(),
                found: y.len(),
            }
            .into());
        }
        Ok(Self { a, y })
    }

    pub fn operator(&self) -> &OperatorRef {
        &self.a
    }

    pub fn observation(&self) -> &[f64] {
        &self.y
    }

    pub fn shape(&self) -> Shape {
        self.a.domain_shape()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * vecops::dist_sq(&self.a.apply(x), &self.y)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.a.adjoint(&vecops::sub(&self.a.apply(x), &self.y))
    }

    /// Starting point: `y` itself when `A` is square, otherwise the adjoint
    /// of `y` normalized by the column sums of `A` (zero where a column
    /// vanishes).
    pub fn initial_estimate(&self) -> Vec<f64> {
        if self.a.range_shape() == self.a.domain_shape() {
            return self.y.clone();
        }
        let back = self.a.adjoint(&self.y);
        let weight = self.a.adjoint(&vec![1.0; self.y.len()]);
        back.iter()
            .zip(&weight)
            .map(|(b, w)| if w.abs() < 1e-12 { 0.0 } else { b / w })
            .collect()
    }
}

/// One stage of the prior schedule: prior index and inclusive iteration span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStage {
    pub prior: usize,
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSchedule {
    stages: Vec<ScheduleStage>,
}

impl PriorSchedule {
    /// Prior 0 for every iteration.
    pub fn single(max_iters: usize) -> Self {
        Self::from_lengths(&[(0, max_iters)])
    }

    /// Consecutive stages of the given lengths; zero-length stages are dropped.
    pub fn from_lengths(lengths: &[(usize, usize)]) -> Self {
        let mut stages = Vec::new();
        let mut next = 1;
        for &(prior, len) in lengths {
            if len == 0 {
                continue;
            }
            stages.push(ScheduleStage {
                prior,
                first: next,
                last: next + len - 1,
            });
            next += len;
        }
        Self { stages }
    }

    pub fn stages(&self) -> &[ScheduleStage] {
        &self.stages
    }

    pub fn total_iters(&self) -> usize {
        self.stages.last().map_or(0, |s| s.last)
    }

    pub fn validate(&self, max_iters: usize, priors: usize) -> Result<(), SolverError> {
        let mut expected = 1;
        for (i, s) in self.stages.iter().enumerate() {
            if s.first != expected || s.last < s.first {
                return Err(SolverError::Config(format!(
                    "schedule stage {i} spans {}..={} but must start at {expected}",
                    s.first, s.last
                )));
            }
            if s.prior >= priors {
                return Err(SolverError::Config(format!(
                    "schedule stage {i} refers to prior {} of {priors}",
                    s.prior
                )));
            }
            expected = s.last + 1;
        }
        if expected != max_iters + 1 {
            return Err(SolverError::Config(format!(
                "schedule covers {} iterations, max_iters is {max_iters}",
                expected - 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma: f64,
    pub tau: f64,
    /// When set and the stage prior is Gaussian with `μ > 0`, the stage uses
    /// `γ = μ/(αL)` instead of `gamma`.
    pub alpha: Option<f64>,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub cg: CgConfig,
    pub schedule: PriorSchedule,
}

impl SolverConfig {
    pub fn new(gamma: f64, tau: f64, max_iters: usize) -> Self {
        Self {
            gamma,
            tau,
            alpha: None,
            max_iters,
            stop_tol: 0.0,
            cg: CgConfig::default(),
            schedule: PriorSchedule::single(max_iters),
        }
    }

    pub fn validate(&self, priors: usize) -> Result<(), SolverError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.gamma) {
            return Err(SolverError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !positive(self.tau) {
            return Err(SolverError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 1.0) || !alpha.is_finite() {
                return Err(SolverError::Config(format!("alpha must exceed 1, got {alpha}")));
            }
        }
        if !(self.stop_tol >= 0.0) {
            return Err(SolverError::Config(format!(
                "stop_tol must be nonnegative, got {}",
                self.stop_tol
            )));
        }
        self.cg.validate()?;
        self.schedule.validate(self.max_iters, priors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub stage: usize,
    pub gamma: f64,
    /// `‖x^k − x^{k−1}‖²`.
    pub iterate_change: f64,
    pub relative_change: f64,
    pub objective: Option<f64>,
    pub psnr: Option<f64>,
    pub subgrad_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// `f(x^0)` under the first stage's prior, when computable.
    pub initial_objective: Option<f64>,
    pub entries: Vec<TraceEntry>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }
}

/// Constants behind a stage's step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConstants {
    pub gamma: f64,
    /// Extreme eigenvalues of `HᵀH` and the Lipschitz constant of `∇h`;
    /// `None` when the prior is not analytic or `α` was not requested.
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub trace: ConvergenceTrace,
    pub stages: Vec<StageConstants>,
}

/// A failed solve keeps whatever it had computed.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: SolverError,
    pub trace: ConvergenceTrace,
    pub last_iterate: Vec<f64>,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.trace.len())
    }
}

impl std::error::Error for SolveFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// One iteration: residual step with the prior, then the scaled prox.
pub fn drp_step(
    x_prev: &[f64],
    prior: &mut Prior,
    data: &DataFidelity,
    gamma: f64,
    tau: f64,
    cg: &CgConfig,
) -> Result<Vec<f64>, SolverError> {
    let residual = prior.residual(x_prev)?;
    let mut z = x_prev.to_vec();
    vecops::axpy(-gamma * tau, &residual, &mut z);
    let problem = ScaledProxProblem::new(&*data.a, &*prior.degradation, &data.y, 1.0 / gamma)?;
    Ok(sprox(&problem, &z, x_prev, cg)?)
}

/// Proximal-gradient step with a denoiser `D: Rⁿ → Rⁿ` and the ordinary
/// Euclidean prox of `γg`.
pub fn pnp_pgm_step(
    x_prev: &[f64],
    denoiser: &mut dyn Restorer,
    data: &DataFidelity,
    gamma: f64,
    tau: f64,
    cg: &CgConfig,
) -> Result<Vec<f64>, SolverError> {
    let shape = data.shape();
    if denoiser.input_shape() != shape || denoiser.output_shape() != shape {
        return Err(SolverError::Config(format!(
            "denoiser maps {} to {}, problem lives on {shape}",
            denoiser.input_shape(),
            denoiser.output_shape()
        )));
    }
    let denoised = denoiser.restore(x_prev)?;
    let residual = vecops::sub(x_prev, &denoised);
    let mut z = x_prev.to_vec();
    vecops::axpy(-gamma * tau, &residual, &mut z);
    let id = Identity::new(shape);
    let problem = ScaledProxProblem::new(&*data.a, &id, &data.y, 1.0 / gamma)?;
    Ok(sprox(&problem, &z, x_prev, cg)?)
}

/// `‖∇g(x) + ∇h(x)‖`, zero exactly at stationary points of `g + h`.
pub fn fixed_point_residual(
    x: &[f64],
    model: &GaussianPriorModel,
    tau: f64,
    data_grad: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<f64, PriorError> {
    let grad = vecops::add(&data_grad(x), &model.grad_implicit_regularizer(tau, x)?);
    Ok(vecops::norm(&grad))
}

fn stage_constants(
    prior: &Prior,
    config: &SolverConfig,
    stage: usize,
) -> Result<StageConstants, SolverError> {
    let fallback = StageConstants {
        gamma: config.gamma,
        mu: None,
        lambda: None,
        lipschitz: None,
    };
    let Some(alpha) = config.alpha else {
        if prior.gaussian_model().is_none() {
            debug!("stage {stage}: external prior, step size taken from config");
        }
        return Ok(fallback);
    };
    let Some(model) = prior.gaussian_model() else {
        warn!("stage {stage}: alpha given but the prior has no analytic constants; using gamma = {} without guarantees", config.gamma);
        return Ok(fallback);
    };
    let (mu, lambda) = spectrum_bounds(&**prior.degradation())?;
    let lipschitz = model.lipschitz_constant(config.tau)?;
    if mu <= 0.0 || lipschitz <= 0.0 {
        warn!("stage {stage}: mu = {mu:e}, L = {lipschitz:e}; step-size rule undefined, using gamma = {}", config.gamma);
        return Ok(StageConstants {
            mu: Some(mu),
            lambda: Some(lambda),
            lipschitz: Some(lipschitz),
            ..fallback
        });
    }
    let gamma = mu / (alpha * lipschitz);
    debug!("stage {stage}: mu = {mu:e}, lambda = {lambda:e}, L = {lipschitz:e}, gamma = {gamma:e}");
    Ok(StageConstants {
        gamma,
        mu: Some(mu),
        lambda: Some(lambda),
        lipschitz: Some(lipschitz),
    })
}

fn psnr_flat(x: &[f64], truth: &[f64]) -> f64 {
    let mse = vecops::dist_sq(x, truth) / x.len().max(1) as f64;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Runs the iteration from [`DataFidelity::initial_estimate`].
pub fn drp_solve(
    data: &DataFidelity,
    priors: &mut [Prior],
    config: &SolverConfig,
    truth: Option<&[f64]>,
) -> Result<SolveOutcome, SolveFailure> {
    drp_solve_from(data.initial_estimate(), data, priors, config, truth)
}

pub fn drp_solve_from(
    x0: Vec<f64>,
    data: &DataFidelity,
    priors: &mut [Prior],
    config: &SolverConfig,
    truth: Option<&[f64]>,
) -> Result<SolveOutcome, SolveFailure> {
    let mut trace = ConvergenceTrace::default();
    let fail = |error: SolverError, trace: ConvergenceTrace, x: Vec<f64>| SolveFailure {
        error,
        trace,
        last_iterate: x,
    };
    if let Err(e) = check_setup(&x0, data, priors, config, truth) {
        return Err(fail(e, trace, x0));
    }
    let mut stages = Vec::with_capacity(config.schedule.stages().len());
    for (i, s) in config.schedule.stages().iter().enumerate() {
        match stage_constants(&priors[s.prior], config, i) {
            Ok(c) => stages.push(c),
            Err(e) => return Err(fail(e, trace, x0)),
        }
    }

    let objective = |prior: &Prior, x: &[f64]| -> Result<Option<f64>, SolverError> {
        match prior.gaussian_model() {
            Some(m) => Ok(Some(data.value(x) + m.implicit_regularizer(config.tau, x)?)),
            None => Ok(None),
        }
    };

    let mut x = x0;
    if let Some(first) = config.schedule.stages().first() {
        match objective(&priors[first.prior], &x) {
            Ok(v) => trace.initial_objective = v,
            Err(e) => return Err(fail(e, trace, x)),
        }
    }

    let mut k = 1;
    'stages: for (si, stage) in config.schedule.stages().iter().enumerate() {
        let prior = &mut priors[stage.prior];
        let gamma = stages[si].gamma;
        let final_stage = si + 1 == config.schedule.stages().len();
        let mut grad_prev = match prior.gaussian_model() {
            Some(m) => match m.grad_implicit_regularizer(config.tau, &x) {
                Ok(g) => Some(g),
                Err(e) => return Err(fail(e.into(), trace, x)),
            },
            None => None,
        };
        while k <= stage.last {
            let next = match drp_step(&x, prior, data, gamma, config.tau, &config.cg) {
                Ok(v) => v,
                Err(e) => return Err(fail(e, trace, x)),
            };
            if !vecops::all_finite(&next) {
                return Err(fail(SolverError::Divergence { iteration: k }, trace, x));
            }
            let delta = vecops::sub(&next, &x);
            let change = vecops::norm_sq(&delta);
            let relative = change.sqrt() / vecops::norm(&next).max(1e-12);
            let objective_value = match objective(prior, &next) {
                Ok(v) => v,
                Err(e) => return Err(fail(e, trace, next)),
            };
            let mut subgrad_norm = None;
            if let (Some(m), Some(prev)) = (prior.gaussian_model(), grad_prev.as_ref()) {
                let grad = match m.grad_implicit_regularizer(config.tau, &next) {
                    Ok(g) => g,
                    Err(e) => return Err(fail(e.into(), trace, next)),
                };
                subgrad_norm = Some(vecops::norm(&surrogate_gradient(
                    &**prior.degradation(),
                    gamma,
                    &delta,
                    &grad,
                    prev,
                )));
                grad_prev = Some(grad);
            }
            trace.entries.push(TraceEntry {
                iter: k,
                stage: si,
                gamma,
                iterate_change: change,
                relative_change: relative,
                objective: objective_value,
                psnr: truth.map(|t| psnr_flat(&next, t)),
                subgrad_norm,
            });
            x = next;
            k += 1;
            if relative < config.stop_tol {
                debug!("stage {si}: relative change {relative:e} below tolerance at iteration {}", k - 1);
                if final_stage {
                    break 'stages;
                }
                break;
            }
        }
        // A stage left early hands its remaining iterations to the next one.
    }

    Ok(SolveOutcome { x, trace, stages })
}

/// `∇g(x^k) + ∇h(x^k)` under an exact prox:
/// `−(1/γ) HᵀH (x^k − x^{k−1}) + ∇h(x^k) − ∇h(x^{k−1})`.
pub fn surrogate_gradient(
    h: &dyn LinearOperator,
    gamma: f64,
    delta: &[f64],
    grad_h: &[f64],
    grad_h_prev: &[f64],
) -> Vec<f64> {
    let mut w = vecops::sub(grad_h, grad_h_prev);
    vecops::axpy(-1.0 / gamma, &h.normal(delta), &mut w);
    w
}

fn check_setup(
    x0: &[f64],
    data: &DataFidelity,
    priors: &[Prior],
    config: &SolverConfig,
    truth: Option<&[f64]>,
) -> Result<(), SolverError> {
    config.validate(priors.len())?;
    let shape = data.shape();
    if x0.len() != shape.len() {
        return Err(OperatorError::LengthMismatch {
            expected: shape.len(),
            found: x0.len(),
        }
        .into());
    }
    if let Some(t) = truth {
        if t.len() != shape.len() {
            return Err(OperatorError::LengthMismatch {
                expected: shape.len(),
                found: t.len(),
            }
            .into());
        }
    }
    for (i, s) in config.schedule.stages().iter().enumerate() {
        let found = priors[s.prior].shape();
        if found != shape {
            return Err(SolverError::StageShape {
                stage: i,
                message: format!("prior acts on {found}, problem lives on {shape}"),
            });
        }
    }
    Ok(())
}
