//! Config-driven experiments: build the problem, run the solver, write the
//! run directory.
//!
//! A run directory holds `restored.png`, `observation.png` (when the
//! observation is an image), `trace.csv`, `summary.json`,
//! `config.resolved.toml` and, on request, `theory.json`. Nothing is written
//! unless the whole run succeeds.

pub mod config;
pub mod synth;
pub mod trace_csv;

pub use config::{ExperimentConfig, OperatorSpec, PriorConfig, ProblemKind, StageSpec};
pub use synth::{SynthSpec, SyntheticImage};
pub use trace_csv::{parse_trace_csv, trace_to_csv, write_trace_csv, TraceRow, TRACE_HEADER};

use crate::linops::{
    bicubic_downsample_operator, blur_operator, compose, decimation_operator, identity,
    OperatorError, OperatorRef,
};
use crate::priors::protocol::ProtocolError;
use crate::priors::{
    squared_exponential_covariance, Endpoint, ExternalRestorer, GaussianPriorModel, PriorError,
};
use crate::solver::{
    drp_solve, fixed_point_residual, DataFidelity, Prior, PriorSchedule, SolverConfig, SolverError,
    StageConstants,
};
use crate::sprox::CgConfig;
use crate::tensor::{add_awgn, gaussian_kernel, psnr, read_image, vecops, write_image, Image, RngSeed, Shape};
use crate::theory::{
    audit_assumptions, check_descent, check_rate, check_tweedie, quadratic_minimizer, rate_constant,
    TheoryError, TheoryReport,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

/// Above this many pixels `theory` only runs the Tweedie check; the rest
/// needs dense solves of the full problem.
pub const THEORY_DENSE_CAP: usize = 1024;

/// Default step-size factor for `theory` when the config leaves `alpha` unset.
pub const THEORY_DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("solver diverged: {0}")]
    Divergence(String),
    #[error("peer protocol error: {0}")]
    Peer(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Io(_) => 3,
            ExperimentError::Divergence(_) => 4,
            ExperimentError::Peer(_) => 5,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        ExperimentError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<SolverError> for ExperimentError {
    fn from(e: SolverError) -> Self {
        if e.is_divergence() {
            return ExperimentError::Divergence(e.to_string());
        }
        match e {
            SolverError::Prior(p) => p.into(),
            other => ExperimentError::Config(other.to_string()),
        }
    }
}

impl From<PriorError> for ExperimentError {
    fn from(e: PriorError) -> Self {
        match e {
            PriorError::Protocol(p) => p.into(),
            other => ExperimentError::Config(other.to_string()),
        }
    }
}

impl From<ProtocolError> for ExperimentError {
    fn from(e: ProtocolError) -> Self {
        ExperimentError::Peer(e.to_string())
    }
}

impl From<OperatorError> for ExperimentError {
    fn from(e: OperatorError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

impl From<TheoryError> for ExperimentError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::Prior(p) => p.into(),
            other => ExperimentError::Config(other.to_string()),
        }
    }
}

/// A config together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let config = ExperimentConfig::from_toml(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.output.dir)
    }
}

/// Ground truth, measurement and the data term built from a config.
#[derive(Debug, Clone)]
pub struct Problem {
    pub truth: Image,
    pub observation: Image,
    pub data: DataFidelity,
}

fn luminance(img: &Image) -> Image {
    let s = img.shape();
    if s.channels != 3 {
        return img.clone();
    }
    Image::from_fn(Shape::gray(s.height, s.width), |_, i, j| {
        0.299 * img.get(0, i, j) + 0.587 * img.get(1, i, j) + 0.114 * img.get(2, i, j)
    })
}

fn operator_from_spec(spec: OperatorSpec, shape: Shape) -> Result<OperatorRef, ExperimentError> {
    let kernel = |size, std| gaussian_kernel(size, std).map_err(|e| ExperimentError::Config(e.to_string()));
    Ok(match spec {
        OperatorSpec::Identity => identity(shape),
        OperatorSpec::Blur { size, std } => blur_operator(&kernel(size, std)?, shape)?,
        OperatorSpec::Decimate { factor } => decimation_operator(factor, shape)?,
        OperatorSpec::Bicubic { factor } => bicubic_downsample_operator(factor, shape)?,
    })
}

/// The measurement operator `A` on images of `shape`.
pub fn measurement_operator(cfg: &ExperimentConfig, shape: Shape) -> Result<OperatorRef, ExperimentError> {
    let p = &cfg.problem;
    let blur = |shape| -> Result<OperatorRef, ExperimentError> {
        let k = p.kernel.expect("validated: kernel present");
        operator_from_spec(OperatorSpec::Blur { size: k.size, std: k.std }, shape)
    };
    match p.kind {
        ProblemKind::Denoise => Ok(identity(shape)),
        ProblemKind::Deblur => blur(shape),
        ProblemKind::Sisr => {
            let d = p.sr_factor.expect("validated: sr_factor present");
            Ok(compose(decimation_operator(d, shape)?, blur(shape)?)?)
        }
        ProblemKind::Custom => {
            let mut op = identity(shape);
            for &spec in &p.operators {
                let next = operator_from_spec(spec, op.range_shape())?;
                op = compose(next, op)?;
            }
            Ok(op)
        }
    }
}

pub fn build_problem(loaded: &LoadedConfig) -> Result<Problem, ExperimentError> {
    let p = &loaded.config.problem;
    let seed = RngSeed(p.seed);
    let mut truth = match (&p.image, &p.synthetic) {
        (Some(path), _) => {
            let path = loaded.base_dir.join(path);
            read_image(&path).map_err(|e| ExperimentError::io(&path, e))?
        }
        (None, Some(s)) => s.render(seed.derive(1)),
        (None, None) => unreachable!("validated: one image source"),
    };
    if p.grayscale {
        truth = luminance(&truth);
    }
    let a = measurement_operator(&loaded.config, truth.shape())?;
    let clean = Image::new(a.range_shape(), a.apply(truth.as_slice()))
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let observation = add_awgn(&clean, p.noise_sigma, seed.derive(2))
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let data = DataFidelity::new(a, observation.as_slice().to_vec())?;
    Ok(Problem {
        truth,
        observation,
        data,
    })
}

fn stage_degradation(q: usize, shape: Shape) -> Result<OperatorRef, ExperimentError> {
    if q == 1 {
        Ok(identity(shape))
    } else {
        Ok(bicubic_downsample_operator(q, shape)?)
    }
}

/// Gaussian prior model with degradation factor `q` on `shape`.
pub struct GaussianFactory {
    mean: Vec<f64>,
    covariance: Arc<nalgebra::DMatrix<f64>>,
    noise_std: f64,
    shape: Shape,
}

impl GaussianFactory {
    pub fn new(prior: &PriorConfig, shape: Shape) -> Result<Self, ExperimentError> {
        let PriorConfig::Gaussian {
            mean,
            variance,
            length_scale,
            nugget,
            noise_std,
            ..
        } = *prior
        else {
            return Err(ExperimentError::Config("expected a gaussian prior".into()));
        };
        if shape.channels != 1 {
            return Err(ExperimentError::Config(format!(
                "the gaussian prior needs a single-channel image, got {shape}"
            )));
        }
        if shape.len() > crate::linops::DEFAULT_MATERIALIZE_CAP {
            return Err(ExperimentError::Config(format!(
                "the gaussian prior is dense; {} pixels exceeds the cap of {}",
                shape.len(),
                crate::linops::DEFAULT_MATERIALIZE_CAP
            )));
        }
        Ok(Self {
            mean: vec![mean; shape.len()],
            covariance: Arc::new(squared_exponential_covariance(shape, variance, length_scale, nugget)),
            noise_std,
            shape,
        })
    }

    pub fn model(&self, q: usize) -> Result<Arc<GaussianPriorModel>, ExperimentError> {
        let h = stage_degradation(q, self.shape)?;
        Ok(Arc::new(GaussianPriorModel::new(
            self.mean.clone(),
            self.covariance.clone(),
            h,
            self.noise_std,
        )?))
    }
}

/// One prior per distinct `q`, and the schedule over them.
pub fn build_priors(cfg: &ExperimentConfig, shape: Shape) -> Result<(Vec<Prior>, PriorSchedule), ExperimentError> {
    let stages = cfg.prior.stages();
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut distinct = Vec::new();
    for s in stages {
        if s.iters > 0 && !index.contains_key(&s.q) {
            index.insert(s.q, distinct.len());
            distinct.push(s.q);
        }
    }
    let mut priors = Vec::with_capacity(distinct.len());
    match &cfg.prior {
        PriorConfig::Gaussian { .. } => {
            if !distinct.is_empty() {
                let factory = GaussianFactory::new(&cfg.prior, shape)?;
                for &q in &distinct {
                    priors.push(Prior::gaussian(factory.model(q)?));
                }
            }
        }
        PriorConfig::External {
            command,
            address,
            timeout_ms,
            ..
        } => {
            let endpoint = match (command, address) {
                (Some(c), _) => Endpoint::Command(c.clone()),
                (None, Some(a)) => Endpoint::Socket(a.clone()),
                (None, None) => unreachable!("validated: endpoint present"),
            };
            for &q in &distinct {
                let h = stage_degradation(q, shape)?;
                let restorer = ExternalRestorer::connect(
                    &endpoint,
                    h.range_shape(),
                    shape,
                    Duration::from_millis(*timeout_ms),
                )?;
                priors.push(Prior::new(Box::new(restorer), h)?);
            }
        }
    }
    let lengths: Vec<(usize, usize)> = stages
        .iter()
        .filter(|s| s.iters > 0)
        .map(|s| (index[&s.q], s.iters))
        .collect();
    Ok((priors, PriorSchedule::from_lengths(&lengths)))
}

pub fn solver_config(cfg: &ExperimentConfig, schedule: PriorSchedule) -> SolverConfig {
    let s = &cfg.solver;
    SolverConfig {
        gamma: s.gamma,
        tau: s.tau,
        alpha: s.alpha,
        max_iters: schedule.total_iters(),
        stop_tol: s.stop_tol,
        cg: s.cg,
        schedule,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    /// Final relative iterate change fell below `stop_tol`.
    pub converged: bool,
    pub final_relative_change: Option<f64>,
    /// PSNR of the initial estimate and of the result against the truth.
    pub input_psnr: f64,
    pub output_psnr: f64,
    pub stages: Vec<StageConstants>,
}

/// Everything a successful run writes, held in memory until it is complete.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub restored: Image,
    pub observation: Image,
    pub trace_csv: String,
    pub summary: RunSummary,
    pub resolved_config: String,
    pub theory: Option<TheoryReport>,
}

pub fn execute(loaded: &LoadedConfig) -> Result<RunArtifacts, ExperimentError> {
    let cfg = &loaded.config;
    let problem = build_problem(loaded)?;
    let shape = problem.truth.shape();
    let (mut priors, schedule) = build_priors(cfg, shape)?;
    let solver = solver_config(cfg, schedule);
    let x0 = problem.data.initial_estimate();
    let image = |v: Vec<f64>| Image::new(shape, v).expect("iterate has the problem shape");
    let input_psnr = psnr(&image(x0.clone()), &problem.truth).map_err(|e| ExperimentError::Config(e.to_string()))?;

    let outcome = drp_solve(&problem.data, &mut priors, &solver, Some(problem.truth.as_slice()))
        .map_err(|f| {
            warn!("solve failed after {} iterations", f.trace.len());
            ExperimentError::from(f.error)
        })?;
    drop(priors);

    let restored = image(outcome.x);
    let output_psnr = psnr(&restored, &problem.truth).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let last = outcome.trace.last().map(|e| e.relative_change);
    info!(
        "{} iterations, PSNR {input_psnr:.2} -> {output_psnr:.2} dB",
        outcome.trace.len()
    );

    let theory = if cfg.output.theory {
        Some(theory_for(cfg, &problem)?)
    } else {
        None
    };

    Ok(RunArtifacts {
        restored,
        observation: problem.observation,
        trace_csv: trace_to_csv(&outcome.trace),
        summary: RunSummary {
            iterations: outcome.trace.len(),
            converged: last.is_some_and(|r| r < cfg.solver.stop_tol),
            final_relative_change: last,
            input_psnr,
            output_psnr,
            stages: outcome.stages,
        },
        resolved_config: cfg.to_toml(),
        theory,
    })
}

impl RunArtifacts {
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        let put = |name: &str, body: &str| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| ExperimentError::io(&path, e))
        };
        let put_image = |name: &str, img: &Image| {
            let path = dir.join(name);
            write_image(img, &path).map_err(|e| ExperimentError::io(&path, e))
        };
        put_image("restored.png", &self.restored)?;
        let obs = self.observation.shape();
        if matches!(obs.channels, 1 | 3) && obs.height > 1 {
            put_image("observation.png", &self.observation)?;
        }
        put("trace.csv", &self.trace_csv)?;
        put("config.resolved.toml", &self.resolved_config)?;
        let summary = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        put("summary.json", &summary)?;
        if let Some(t) = &self.theory {
            put("theory.json", &t.to_json())?;
        }
        Ok(())
    }
}

/// `drp run`: solve and write the run directory.
pub fn run_experiment(config_path: &Path) -> Result<RunSummary, ExperimentError> {
    let loaded = LoadedConfig::load(config_path)?;
    let artifacts = execute(&loaded)?;
    artifacts.write(&loaded.output_dir())?;
    Ok(artifacts.summary)
}

fn theory_for(cfg: &ExperimentConfig, problem: &Problem) -> Result<TheoryReport, ExperimentError> {
    let last = cfg
        .prior
        .stages()
        .last()
        .expect("validated: at least one stage");
    let factory = GaussianFactory::new(&cfg.prior, problem.truth.shape())?;
    let model = factory.model(last.q)?;
    let alpha = cfg.solver.alpha.unwrap_or(THEORY_DEFAULT_ALPHA);
    theory_report(
        &model,
        &problem.data,
        cfg.solver.tau,
        alpha,
        cfg.solver.gamma,
        cfg.total_iters(),
        RngSeed(cfg.problem.seed).derive(3),
    )
}

/// Theory evidence for one analytic prior.
///
/// The solve uses exact prox steps and `γ = μ/(αL)`; when `μ = 0` the
/// descent and rate checks do not apply and `fallback_gamma` is used.
pub fn theory_report(
    model: &Arc<GaussianPriorModel>,
    data: &DataFidelity,
    tau: f64,
    alpha: f64,
    fallback_gamma: f64,
    iters: usize,
    seed: RngSeed,
) -> Result<TheoryReport, ExperimentError> {
    let n = model.n();
    let trials = if n <= THEORY_DENSE_CAP { 100 } else { 10 };
    let mut report = TheoryReport {
        tweedie_max_rel_error: Some(check_tweedie(model, tau, trials, seed)?),
        ..TheoryReport::default()
    };
    if n > THEORY_DENSE_CAP {
        warn!("{n} pixels exceeds {THEORY_DENSE_CAP}; only the Tweedie check was run");
        return Ok(report);
    }

    let audit = audit_assumptions(model, &**data.operator(), tau)?;
    let well_posed = audit.mu > 0.0 && audit.lipschitz > 0.0;
    let mut solver = SolverConfig::new(fallback_gamma, tau, iters);
    solver.cg = CgConfig::converged(n);
    solver.alpha = Some(alpha);
    let mut priors = vec![Prior::gaussian(model.clone())];
    let outcome = drp_solve(data, &mut priors, &solver, None).map_err(|f| ExperimentError::from(f.error))?;

    let (x_star, f_star) = quadratic_minimizer(model, data, tau)?;
    let grad = |v: &[f64]| data.gradient(v);
    report.fixed_point_residual = Some(fixed_point_residual(&outcome.x, model, tau, grad)?);
    report.minimizer_rel_error =
        Some(vecops::dist_sq(&outcome.x, &x_star).sqrt() / vecops::norm(&x_star).max(1e-300));
    if well_posed {
        report.descent_violations = Some(check_descent(&outcome.trace, audit.lipschitz, alpha)?);
        report.descent_iterations = Some(outcome.trace.len());
        let c = rate_constant(audit.lipschitz, alpha, audit.mu, audit.lambda)?;
        report.rate_constant_check = Some(check_rate(&outcome.trace, f_star, c)?);
    } else {
        warn!("mu = {:e}: descent and rate checks need a full-rank degradation", audit.mu);
    }
    report.assumption_audit = Some(audit);
    Ok(report)
}

/// `drp theory`: the report for the final stage's prior.
pub fn run_theory(config_path: &Path) -> Result<TheoryReport, ExperimentError> {
    let loaded = LoadedConfig::load(config_path)?;
    if !matches!(loaded.config.prior, PriorConfig::Gaussian { .. }) {
        return Err(ExperimentError::Config("theory needs the gaussian prior".into()));
    }
    let problem = build_problem(&loaded)?;
    let report = theory_for(&loaded.config, &problem)?;
    let dir = loaded.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
    let path = dir.join("theory.json");
    std::fs::write(&path, report.to_json()).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(report)
}

/// `drp synth`: write the corpus described by a spec file.
pub fn run_synth(spec_path: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| ExperimentError::io(spec_path, e))?;
    let spec = SynthSpec::from_toml(&text)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", spec_path.display())))?;
    let root = spec_path.parent().unwrap_or(Path::new(""));
    spec.write(root)
}
