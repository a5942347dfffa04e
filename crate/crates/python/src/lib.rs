//! Python bindings: the analytic Gaussian prior, experiment runs and the
//! synthetic textures. Vectors cross the boundary as flat lists in row-major
//! pixel order.

use drp_core::experiment::{self, parse_trace_csv, ExperimentError, SyntheticImage};
use drp_core::linops::{bicubic_downsample_operator, identity, OperatorRef};
use drp_core::priors::{squared_exponential_covariance, GaussianPriorModel};
use drp_core::tensor::{RngSeed, Shape};
use drp_core::theory::tweedie_gap;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;
use std::sync::Arc;

create_exception!(drp_py, DrpError, PyException, "A failed run; args are (message, exit_code).");

fn drp_err(e: ExperimentError) -> PyErr {
    let code = e.exit_code();
    DrpError::new_err((e.to_string(), code))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Squared-exponential Gaussian prior on an `height × width` grid, observed
/// through a bicubic downsampler of factor `q` (1 means no degradation).
#[pyclass(name = "GaussianPrior", frozen)]
struct PyGaussianPrior {
    model: Arc<GaussianPriorModel>,
}

#[pymethods]
impl PyGaussianPrior {
    #[new]
    #[pyo3(signature = (height, width, *, mean = 0.5, variance = 0.05, length_scale = 2.0, nugget = 1e-3, noise_std = 0.05, q = 1))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        height: usize,
        width: usize,
        mean: f64,
        variance: f64,
        length_scale: f64,
        nugget: f64,
        noise_std: f64,
        q: usize,
    ) -> PyResult<Self> {
        let shape = Shape::new(1, height, width).map_err(value_err)?;
        let h: OperatorRef = if q == 1 {
            identity(shape)
        } else {
            bicubic_downsample_operator(q, shape).map_err(value_err)?
        };
        let cov = squared_exponential_covariance(shape, variance, length_scale, nugget);
        let model = GaussianPriorModel::new(vec![mean; shape.len()], Arc::new(cov), h, noise_std)
            .map_err(value_err)?;
        Ok(Self { model: Arc::new(model) })
    }

    /// Number of pixels.
    #[getter]
    fn n(&self) -> usize {
        self.model.n()
    }

    /// Length of an observation `Hx`.
    #[getter]
    fn p(&self) -> usize {
        self.model.p()
    }

    fn degrade(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.model.degradation().try_apply(&x).map_err(value_err)
    }

    /// Posterior mean of `x` given `s = Hx + n`.
    fn restore(&self, s: Vec<f64>) -> PyResult<Vec<f64>> {
        self.model.restore(&s).map_err(value_err)
    }

    fn regularizer(&self, tau: f64, x: Vec<f64>) -> PyResult<f64> {
        self.model.implicit_regularizer(tau, &x).map_err(value_err)
    }

    fn gradient(&self, tau: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.model.grad_implicit_regularizer(tau, &x).map_err(value_err)
    }

    fn lipschitz(&self, tau: f64) -> PyResult<f64> {
        self.model.lipschitz_constant(tau).map_err(value_err)
    }

    /// Relative gap between `τHᵀH(x − R(Hx))` and the regularizer gradient.
    fn tweedie_gap(&self, tau: f64, x: Vec<f64>) -> PyResult<f64> {
        tweedie_gap(&self.model, tau, &x).map_err(value_err)
    }
}

/// Runs a config file and returns the summary as JSON text.
#[pyfunction]
fn run(py: Python<'_>, config: PathBuf) -> PyResult<String> {
    let summary = py.detach(|| experiment::run_experiment(&config)).map_err(drp_err)?;
    Ok(serde_json::to_string(&summary).expect("summary serializes"))
}

/// Theory report for a config, as JSON text.
#[pyfunction]
fn theory(py: Python<'_>, config: PathBuf) -> PyResult<String> {
    let report = py.detach(|| experiment::run_theory(&config)).map_err(drp_err)?;
    Ok(report.to_json())
}

/// A synthetic texture as a flat list of `size * size` values.
#[pyfunction]
#[pyo3(signature = (kind, size, *, cell = 8, cutoff = 4.0, seed = 0))]
fn synthetic(kind: &str, size: usize, cell: usize, cutoff: f64, seed: u64) -> PyResult<Vec<f64>> {
    let spec = match kind {
        "gradient" => SyntheticImage::Gradient { size },
        "checkerboard" => SyntheticImage::Checkerboard { size, cell },
        "bandlimited" => SyntheticImage::Bandlimited { size, cutoff },
        "mixed" => SyntheticImage::Mixed { size, cell },
        other => return Err(PyValueError::new_err(format!("unknown texture {other:?}"))),
    };
    spec.validate().map_err(PyValueError::new_err)?;
    Ok(spec.render(RngSeed(seed)).into_vec())
}

type Row = (usize, f64, Option<f64>, Option<f64>, Option<f64>);

/// Parses trace CSV text into `(iter, iterate_change, objective, psnr, subgrad_norm)` rows.
#[pyfunction]
fn parse_trace(text: &str) -> PyResult<Vec<Row>> {
    let rows = parse_trace_csv(text).map_err(PyValueError::new_err)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.iter, r.iterate_change, r.objective, r.psnr, r.subgrad_norm))
        .collect())
}

#[pymodule]
fn drp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DrpError", m.py().get_type::<DrpError>())?;
    m.add_class::<PyGaussianPrior>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(theory, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(parse_trace, m)?)?;
    Ok(())
}
