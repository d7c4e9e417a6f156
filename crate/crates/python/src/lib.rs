//! Python bindings: forward models, single runs, batch experiments and the
//! property checks.
//!
//! Matrices cross the boundary as lists of rows; an ensemble is a list of
//! members.

use std::path::PathBuf;
use std::sync::Arc;

use leki_core::diagnostics::{self as diag, MetricsRow, RiccatiParams};
use leki_core::dynamics::{self, InflationConfig, RunConfig, RunHooks, StepPolicy, StoppingRule};
use leki_core::ensemble::Ensemble;
use leki_core::harness::{self, ExperimentConfig, ExperimentOutput, TrialSummary};
use leki_core::localization::{
    build_psi, DistanceMetric, KernelKind, LocalizationKernel, LocalizationScheme, ModelJacobian,
};
use leki_core::models::{
    DcModel, DcResistivityConfig, ForwardModel, HankelMethod, LayeredEarth, LinearModel,
    LocalCubicModel, Lorenz96Config, Lorenz96Model,
};
use leki_core::teki::{PriorCovariance, TikhonovExtension};
use leki_core::Error;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Usage(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, Error> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config("rows have different lengths".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_kernel(name: &str) -> PyResult<KernelKind> {
    match name {
        "gaussian" => Ok(KernelKind::Gaussian),
        "gaspari-cohn" => Ok(KernelKind::GaspariCohn),
        "hard-cutoff" => Ok(KernelKind::HardCutoff),
        "identity" => Ok(KernelKind::Identity),
        other => Err(PyValueError::new_err(format!("unknown kernel {other:?}"))),
    }
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", r.iter)?;
    d.set_item("t", r.t)?;
    d.set_item("misfit", r.misfit)?;
    d.set_item("max_error", r.max_error)?;
    d.set_item("rmse", r.rmse)?;
    d.set_item("scaled_misfit", r.scaled_misfit)?;
    d.set_item("trace_cuu", r.trace_cuu)?;
    d.set_item("max_diag", r.max_diag)?;
    d.set_item("min_diag", r.min_diag)?;
    d.set_item("r_opnorm", r.r_opnorm)?;
    d.set_item("r_onenorm", r.r_onenorm)?;
    d.set_item("obs_ratio", r.obs_ratio)?;
    d.set_item("reg_ratio", r.reg_ratio)?;
    Ok(d)
}

/// A forward model `G: R^d_u -> R^d_y`.
#[pyclass(module = "leki", frozen)]
pub struct Model {
    inner: Arc<dyn ForwardModel>,
}

#[pymethods]
impl Model {
    /// `G(u) = H u`, with `H` given as rows.
    #[staticmethod]
    fn linear(h: Vec<Vec<f64>>) -> PyResult<Self> {
        let h = matrix_from_rows(&h).map_err(to_py)?;
        Ok(Self {
            inner: Arc::new(LinearModel::new(h)),
        })
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self {
            inner: Arc::new(LinearModel::identity(dim)),
        }
    }

    #[staticmethod]
    fn local_cubic(dim: usize) -> Self {
        Self {
            inner: Arc::new(LocalCubicModel::new(dim)),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (dim, forcing = 8.0, obs_time = 0.2, inner_dt = 0.05))]
    fn lorenz96(dim: usize, forcing: f64, obs_time: f64, inner_dt: f64) -> PyResult<Self> {
        let cfg = Lorenz96Config {
            dim,
            forcing,
            obs_time,
            inner_dt,
        };
        Ok(Self {
            inner: Arc::new(Lorenz96Model::new(cfg).map_err(to_py)?),
        })
    }

    /// Schlumberger sounding over `layer_count` log-spaced layers.
    #[staticmethod]
    #[pyo3(signature = (layer_count = 20, half_spacings = None, depth_min = 0.1, depth_max = 1e5, quadrature = false))]
    fn dc(
        layer_count: usize,
        half_spacings: Option<Vec<f64>>,
        depth_min: f64,
        depth_max: f64,
        quadrature: bool,
    ) -> PyResult<Self> {
        let mut cfg = DcResistivityConfig {
            layer_count,
            depth_min,
            depth_max,
            method: if quadrature {
                HankelMethod::Quadrature
            } else {
                HankelMethod::Filter
            },
            ..DcResistivityConfig::default()
        };
        if let Some(s) = half_spacings {
            cfg.half_spacings = s;
        }
        cfg.validate().map_err(to_py)?;
        Ok(Self {
            inner: Arc::new(DcModel::new(cfg).map_err(to_py)?),
        })
    }

    /// The Tikhonov extension `u -> (C0^{-1/2} u, G(u))` for a diagonal `C0`.
    fn tikhonov(&self, c0_diagonal: Vec<f64>) -> PyResult<Self> {
        let c0 = PriorCovariance::Diagonal(DVector::from_vec(c0_diagonal));
        let ext = TikhonovExtension::new(self.inner.clone(), &c0).map_err(to_py)?;
        Ok(Self { inner: Arc::new(ext) })
    }

    #[getter]
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let y = self.inner.evaluate(&DVector::from_vec(u)).map_err(to_py)?;
        Ok(y.iter().copied().collect())
    }

    /// Analytic Jacobian when available, else central differences.
    fn jacobian(&self, u: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let u = DVector::from_vec(u);
        let j = match self.inner.jacobian(&u) {
            Some(j) => j,
            None => {
                let h = leki_core::localization::default_fd_step(&u);
                leki_core::models::finite_difference_jacobian(self.inner.as_ref(), &u, h).map_err(to_py)?
            }
        };
        Ok(matrix_to_rows(&j))
    }

    fn __repr__(&self) -> String {
        format!("Model(param_dim={}, output_dim={})", self.inner.param_dim(), self.inner.output_dim())
    }
}
type RunOutput<'py> = (Vec<Vec<f64>>, Vec<Bound<'py, PyDict>>, String);


/// Runs the Euler-discretized flow from `members` (a list of `J` vectors).
///
/// With `radius` set, the flow is localized with the given kernel and the
/// model's output centers (or the Jacobian when the model has none).
/// Returns the final members and one metrics dict per iteration.
#[pyfunction]
#[pyo3(signature = (model, members, y, dt = 0.1, iterations = 100, radius = None, kernel = "gaussian", periodic = false, sigma = 0.0, truth = None, stds = None, target = None))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    model: &Model,
    members: Vec<Vec<f64>>,
    y: Vec<f64>,
    dt: f64,
    iterations: usize,
    radius: Option<f64>,
    kernel: &str,
    periodic: bool,
    sigma: f64,
    truth: Option<Vec<f64>>,
    stds: Option<Vec<f64>>,
    target: Option<f64>,
) -> PyResult<RunOutput<'py>> {
    let m = model.inner.clone();
    let ens = Ensemble::new(matrix_from_rows(&members).map_err(to_py)?.transpose()).map_err(to_py)?;
    let scheme = match radius {
        None => None,
        Some(r) => {
            let d = m.param_dim();
            let metric = if periodic {
                DistanceMetric::PeriodicLattice { period: d }
            } else {
                DistanceMetric::Lattice
            };
            let k = LocalizationKernel::new(parse_kernel(kernel)?, r).map_err(to_py)?;
            let psi = build_psi(&metric, &k, d).map_err(to_py)?;
            let s = match m.locality() {
                Some(l) => LocalizationScheme::centralized(psi, l.centers),
                None => LocalizationScheme::linearized(psi, Arc::new(ModelJacobian::new(m.clone()))),
            };
            Some(s.map_err(to_py)?)
        }
    };
    let mut stop = StoppingRule::iterations(iterations);
    stop.target_scaled_misfit = target;
    let mut cfg = RunConfig::new(StepPolicy::Fixed { dt }, stop);
    cfg.inflation = InflationConfig::new(sigma).map_err(to_py)?;
    cfg.truth = truth.map(DVector::from_vec);
    cfg.stds = stds.map(DVector::from_vec);
    let y = DVector::from_vec(y);
    let (state, record) = py
        .detach(|| dynamics::run(ens, m.as_ref(), scheme.as_ref(), &y, &cfg, RunHooks::default()))
        .map_err(to_py)?;
    let finals = matrix_to_rows(&state.ensemble.members().transpose());
    let rows = record.rows.iter().map(|r| row_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
    Ok((finals, rows, record.exit.to_string()))
}

/// Localization taper `Psi_ij = psi(d(i, j) / radius)` as rows.
#[pyfunction]
#[pyo3(signature = (dim, radius, kernel = "gaussian", periodic = false))]
fn taper(dim: usize, radius: f64, kernel: &str, periodic: bool) -> PyResult<Vec<Vec<f64>>> {
    let metric = if periodic {
        DistanceMetric::PeriodicLattice { period: dim }
    } else {
        DistanceMetric::Lattice
    };
    let k = LocalizationKernel::new(parse_kernel(kernel)?, radius).map_err(to_py)?;
    Ok(matrix_to_rows(&build_psi(&metric, &k, dim).map_err(to_py)?))
}

#[pyfunction]
fn riccati_solution(a: f64, b: f64, sigma: f64, y0: f64, t: f64) -> PyResult<f64> {
    diag::riccati_solution(&RiccatiParams { a, b, sigma, y0 }, t).map_err(to_py)
}

/// Apparent resistivity of a layered earth at half-spacing `s`.
#[pyfunction]
fn apparent_resistivity(resistivities: Vec<f64>, thicknesses: Vec<f64>, s: f64) -> PyResult<f64> {
    let earth = LayeredEarth::new(resistivities, thicknesses).map_err(to_py)?;
    earth.apparent_resistivity(s, HankelMethod::Filter).map_err(to_py)
}

/// A batch experiment configuration.
#[pyclass(module = "leki", name = "ExperimentConfig", skip_from_py_object)]
#[derive(Clone)]
pub struct PyExperimentConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperimentConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Self::load(None, Some(name))
    }

    /// A config file, optionally layered over a preset.
    #[staticmethod]
    #[pyo3(signature = (path = None, preset = None))]
    fn load(path: Option<PathBuf>, preset: Option<&str>) -> PyResult<Self> {
        Ok(Self {
            inner: harness::load_with_preset(preset, path.as_deref()).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials
    }

    #[setter]
    fn set_trials(&mut self, trials: usize) -> PyResult<()> {
        if trials == 0 {
            return Err(PyValueError::new_err("trials must be at least 1"));
        }
        self.inner.trials = trials;
        Ok(())
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims.clone()
    }

    #[setter]
    fn set_dims(&mut self, dims: Vec<usize>) {
        self.inner.dims = dims;
    }

    #[getter]
    fn ensemble_sizes(&self) -> Vec<usize> {
        self.inner.ensemble_sizes.clone()
    }

    #[setter]
    fn set_ensemble_sizes(&mut self, sizes: Vec<usize>) {
        self.inner.ensemble_sizes = sizes;
    }

    #[getter]
    fn max_iterations(&self) -> usize {
        self.inner.stopping.max_iterations
    }

    #[setter]
    fn set_max_iterations(&mut self, n: usize) {
        self.inner.stopping.max_iterations = n;
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(experiment={:?}, dims={:?}, ensemble_sizes={:?}, trials={})",
            self.inner.experiment.as_str(),
            self.inner.dims,
            self.inner.ensemble_sizes,
            self.inner.trials
        )
    }
}

/// Results of [`run_experiment`].
#[pyclass(module = "leki", frozen)]
pub struct Results {
    inner: ExperimentOutput,
}

fn summary_dict<'py>(py: Python<'py>, s: &TrialSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("dim", s.dim)?;
    d.set_item("ensemble_size", s.ensemble_size)?;
    d.set_item("method", s.method.as_str())?;
    d.set_item("trial", s.trial)?;
    d.set_item("exit", s.exit.as_str())?;
    d.set_item("iterations", s.iterations)?;
    d.set_item("metric", &s.metric)?;
    d.set_item("value", s.value)?;
    d.set_item("input_digest", &s.input_digest)?;
    Ok(d)
}

#[pymethods]
impl Results {
    /// One dict per (dim, J, method) cell.
    fn reports<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .reports
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("dim", r.dim)?;
                d.set_item("ensemble_size", r.ensemble_size)?;
                d.set_item("method", r.method.as_str())?;
                d.set_item("metric", &r.metric)?;
                d.set_item("trials", r.trials)?;
                d.set_item("target_reached", r.target_reached)?;
                d.set_item("max_iterations", r.max_iterations)?;
                d.set_item("failed", r.failed)?;
                d.set_item("mean", r.mean)?;
                d.set_item("median", r.median)?;
                d.set_item("std", r.std)?;
                Ok(d)
            })
            .collect()
    }

    /// One dict per run.
    fn trials<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .results
            .iter()
            .map(|r| summary_dict(py, &TrialSummary::from(r)))
            .collect()
    }

    /// The per-iteration rows of run `index` (in `trials()` order).
    fn record<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let r = self
            .inner
            .results
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("no run {index}")))?;
        r.record.rows.iter().map(|row| row_dict(py, row)).collect()
    }

    #[pyo3(signature = (out, json = false))]
    fn write(&self, out: PathBuf, json: bool) -> PyResult<String> {
        let files = harness::write_outputs(&self.inner, &out, json).map_err(to_py)?;
        Ok(files.dir.display().to_string())
    }

    fn table(&self) -> String {
        harness::format_reports(&self.inner.reports)
    }
}

#[pyfunction]
#[pyo3(signature = (config, workers = 1))]
fn run_experiment(py: Python<'_>, config: &PyExperimentConfig, workers: usize) -> PyResult<Results> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| harness::run_experiment(&cfg, workers)).map_err(to_py)?;
    Ok(Results { inner })
}

/// `(name, passed, worst, tolerance)` for every property suite.
#[pyfunction]
fn self_check(py: Python<'_>) -> PyResult<Vec<(String, bool, f64, f64)>> {
    let out = py.detach(harness::check::self_check).map_err(to_py)?;
    Ok(out
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.worst, c.tolerance))
        .collect())
}

#[pymodule]
fn leki(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<PyExperimentConfig>()?;
    m.add_class::<Results>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(taper, m)?)?;
    m.add_function(wrap_pyfunction!(riccati_solution, m)?)?;
    m.add_function(wrap_pyfunction!(apparent_resistivity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(self_check, m)?)?;
    Ok(())
}
