//! Python bindings: problems, run configs, training, checkpoints and the
//! numerical checks.

use std::collections::BTreeMap;

use beampinn::beams::{BeamProblem, Domain, NoiseSpec, ProblemId};
use beampinn::net::{self, Checkpoint, NetArch, ParamVector};
use beampinn::trainer::{self, EvalGrid, RunConfig, RunRecord};
use beampinn::{colloc, fdcheck, loss, metrics};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(beampinn_py, BeamPinnError, PyException, "Raised for every solver error; the message starts with its category.");

fn err(e: beampinn::Error) -> PyErr {
    let msg = e.to_string();
    let cat = e.category();
    if msg.starts_with(cat) {
        BeamPinnError::new_err(msg)
    } else {
        BeamPinnError::new_err(format!("{cat}: {msg}"))
    }
}

type Res<T> = PyResult<T>;

fn domain_of(d: (f64, f64, f64, f64)) -> Res<Domain> {
    Domain::new(d.0, d.1, d.2, d.3).map_err(err)
}

/// A beam problem: equation family, foundation stiffness, domain and
/// initial data.
#[pyclass(name = "Problem", module = "beampinn_py", frozen)]
struct PyProblem {
    inner: BeamProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (id, k=1.0, a=1.0, domain=None, noise_percent=0.0, noise_seed=0))]
    fn new(id: &str, k: f64, a: f64, domain: Option<(f64, f64, f64, f64)>, noise_percent: f64, noise_seed: u64) -> Res<Self> {
        let id = ProblemId::parse(id).map_err(err)?;
        let domain = match domain {
            Some(d) => domain_of(d)?,
            None => id.base_domain(),
        };
        let noise = (noise_percent > 0.0).then_some(NoiseSpec { percent: noise_percent, seed: noise_seed });
        let inner = BeamProblem::new(id, domain, k, a, noise).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn id(&self) -> &'static str {
        self.inner.id.name()
    }

    #[getter]
    fn channels(&self) -> Vec<&'static str> {
        self.inner.kind.channel_names().to_vec()
    }

    #[getter]
    fn domain(&self) -> (f64, f64, f64, f64) {
        let d = self.inner.domain;
        (d.x_min, d.x_max, d.t_min, d.t_max)
    }

    fn exact_solution(&self, x: f64, t: f64) -> Res<Vec<f64>> {
        self.inner.exact_solution(x, t).map_err(err)
    }

    /// Residuals of the closed form at (x, t), one per equation.
    fn residual_of_exact(&self, x: f64, t: f64) -> Res<Vec<f64>> {
        self.inner.residual_of_exact(x, t).map_err(err)
    }

    fn max_exact_residuals(&self, points: Vec<(f64, f64)>) -> Res<Vec<f64>> {
        self.inner.max_exact_residuals(&points).map_err(err)
    }

    fn __repr__(&self) -> String {
        let d = self.inner.domain;
        format!("Problem({}, x=[{}, {}], t=[{}, {}])", self.inner.id.name(), d.x_min, d.x_max, d.t_min, d.t_max)
    }
}

/// A fully resolved run configuration.
#[pyclass(name = "RunConfig", module = "beampinn_py", frozen)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Resolves a JSON document (default: the desk profile) plus
    /// `key.path=value` overrides.
    #[new]
    #[pyo3(signature = (json="{}", overrides=Vec::new()))]
    fn new(json: &str, overrides: Vec<String>) -> Res<Self> {
        let inner = RunConfig::from_json_str(json, &overrides).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> Res<Self> {
        Ok(Self { inner: RunConfig::load(path, &[]).map_err(err)? })
    }

    /// A copy with further overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> Res<Self> {
        Self::new(&self.inner.to_json_pretty(), overrides)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_pretty()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn problem(&self) -> Res<PyProblem> {
        Ok(PyProblem { inner: self.inner.build_problem().map_err(err)? })
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.clone()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("RunConfig({} {} {} epochs, hash {})", self.inner.problem.id, self.inner.mode, self.inner.epochs, self.inner.hash())
    }
}

#[pyclass(name = "Checkpoint", module = "beampinn_py", frozen)]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    /// Fresh Xavier parameters for `widths` (no input normalization).
    #[staticmethod]
    #[pyo3(signature = (widths, seed=0))]
    fn xavier(widths: Vec<usize>, seed: u64) -> Res<Self> {
        let arch = NetArch::new(widths).map_err(err)?;
        let params = net::init_xavier(&arch, seed);
        Ok(Self { inner: Checkpoint::new(arch, params).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> Res<Self> {
        Ok(Self { inner: net::load_checkpoint(path).map_err(err)? })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> Res<Self> {
        let inner = Checkpoint::from_bytes(data, std::path::Path::new("<bytes>")).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> Res<()> {
        net::save_checkpoint(&self.inner, path).map_err(err)
    }

    fn to_bytes(&self) -> Res<Vec<u8>> {
        self.inner.to_bytes().map_err(err)
    }

    /// Content id (first 16 hex digits of the SHA-256 of the bytes).
    fn id(&self) -> Res<String> {
        trainer::checkpoint_id(&self.inner).map_err(err)
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.arch.widths.clone()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.as_slice().to_vec()
    }

    #[getter]
    fn meta(&self) -> BTreeMap<String, String> {
        self.inner.meta.clone()
    }

    fn forward(&self, x: f64, t: f64) -> Res<Vec<f64>> {
        net::forward(&self.inner.params, &self.inner.arch, x, t).map_err(err)
    }

    fn forward_batch(&self, points: Vec<(f64, f64)>) -> Res<Vec<Vec<f64>>> {
        net::forward_batch(&self.inner.params, &self.inner.arch, &points).map_err(err)
    }

    /// Relative L2 error (percent) per channel on `n_x` points at time `t`;
    /// `None` when the problem has no closed form.
    #[pyo3(signature = (problem, t, n_x=1000))]
    fn relative_error(&self, problem: &PyProblem, t: f64, n_x: usize) -> Res<Option<Vec<f64>>> {
        let report = trainer::evaluate(&self.inner, &problem.inner, EvalGrid::Slice { t, n_x }).map_err(err)?;
        Ok(report.r)
    }

    /// Field table CSV on an `n_x` by `n_t` grid over the problem's domain.
    #[pyo3(signature = (problem, n_x=256, n_t=101))]
    fn field_csv(&self, problem: &PyProblem, n_x: usize, n_t: usize) -> Res<String> {
        let report = trainer::evaluate(&self.inner, &problem.inner, EvalGrid::Grid { n_x, n_t }).map_err(err)?;
        Ok(report.field.to_csv())
    }

    fn __repr__(&self) -> String {
        format!("Checkpoint({}, {} params)", self.inner.arch, self.inner.params.len())
    }
}

#[pyclass(name = "RunRecord", module = "beampinn_py", frozen)]
struct PyRunRecord {
    inner: RunRecord,
}

#[pymethods]
impl PyRunRecord {
    #[getter]
    fn problem(&self) -> String {
        self.inner.problem.clone()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs.len()
    }

    /// Total loss at the start of each epoch.
    #[getter]
    fn losses(&self) -> Vec<f64> {
        self.inner.epochs.iter().map(|e| e.total).collect()
    }

    #[getter]
    fn final_loss(&self) -> f64 {
        self.inner.final_breakdown.total
    }

    #[getter]
    fn final_r(&self) -> Option<Vec<f64>> {
        self.inner.final_r.clone()
    }

    #[getter]
    fn t_star(&self) -> f64 {
        self.inner.t_star
    }

    #[getter]
    fn wall_time_s(&self) -> f64 {
        self.inner.wall_time_s
    }

    #[getter]
    fn parent(&self) -> Option<String> {
        self.inner.parent.clone()
    }

    fn log_csv(&self) -> String {
        self.inner.log_csv()
    }
}

fn finish(r: beampinn::Result<(Checkpoint, RunRecord)>) -> Res<(PyCheckpoint, PyRunRecord)> {
    let (ckpt, rec) = r.map_err(err)?;
    Ok((PyCheckpoint { inner: ckpt }, PyRunRecord { inner: rec }))
}

/// Trains from the configured initialization.
#[pyfunction]
fn train(py: Python<'_>, config: &PyRunConfig) -> Res<(PyCheckpoint, PyRunRecord)> {
    let cfg = config.inner.clone();
    finish(py.detach(move || trainer::train(&cfg)))
}

/// Trains warm-started from `parent`.
#[pyfunction]
fn transfer_train(py: Python<'_>, parent: &PyCheckpoint, config: &PyRunConfig) -> Res<(PyCheckpoint, PyRunRecord)> {
    let (p, cfg) = (parent.inner.clone(), config.inner.clone());
    finish(py.detach(move || trainer::transfer_train(&p, &cfg)))
}

/// The Xavier-initialized counterpart of `transfer_train`.
#[pyfunction]
fn control_train(py: Python<'_>, parent: &PyCheckpoint, config: &PyRunConfig) -> Res<(PyCheckpoint, PyRunRecord)> {
    let (p, cfg) = (parent.inner.clone(), config.inner.clone());
    finish(py.detach(move || trainer::control_train(&p, &cfg)))
}

#[pyfunction]
fn causal_weights(slice_losses: Vec<f64>, epsilon: f64) -> Vec<f64> {
    loss::causal_weights(&slice_losses, epsilon)
}

#[pyfunction]
fn relative_l2_percent(pred: Vec<f64>, exact: Vec<f64>) -> Res<f64> {
    metrics::relative_l2_percent(&pred, &exact).map_err(err)
}

#[pyfunction]
fn halton_points(domain: (f64, f64, f64, f64), n: usize) -> Res<Vec<(f64, f64)>> {
    Ok(colloc::halton_points(&domain_of(domain)?, n))
}

/// Worst relative error of the network's input derivatives against
/// extended-precision finite differences.
#[pyfunction]
fn derivative_check(widths: Vec<usize>, params: Vec<f64>, points: Vec<(f64, f64)>) -> Res<f64> {
    let arch = NetArch::new(widths).map_err(err)?;
    let r = fdcheck::derivative_check(&arch, &ParamVector::new(params), &points).map_err(err)?;
    Ok(r.max_rel_err())
}

#[pymodule]
fn beampinn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BeamPinnError", m.py().get_type::<BeamPinnError>())?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyRunRecord>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_train, m)?)?;
    m.add_function(wrap_pyfunction!(control_train, m)?)?;
    m.add_function(wrap_pyfunction!(causal_weights, m)?)?;
    m.add_function(wrap_pyfunction!(relative_l2_percent, m)?)?;
    m.add_function(wrap_pyfunction!(halton_points, m)?)?;
    m.add_function(wrap_pyfunction!(derivative_check, m)?)?;
    Ok(())
}
