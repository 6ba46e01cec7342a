//! Python bindings: waveform blocks, experiment configs, both solvers and the
//! radar evaluation helpers.

use dfrc_waveform::costs::{self, CostBreakdown};
use dfrc_waveform::experiment::{self, DesignProblem, ExperimentConfig, SolverKind};
use dfrc_waveform::mm;
use dfrc_waveform::radar::{self, CfarConfig};
use dfrc_waveform::scenario::{self, ArrayGeometry, ArraySide, WaveformBlock};
use dfrc_waveform::{Complex64, Error};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Dimension { .. } | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// `N_T x L` transmit block, stored column-major (`index = l * n_tx + n`).
#[pyclass(name = "Waveform", module = "dfrc", skip_from_py_object)]
#[derive(Clone)]
struct PyWaveform {
    inner: WaveformBlock,
}

#[pymethods]
impl PyWaveform {
    #[new]
    fn new(n_tx: usize, block_len: usize, data: Vec<Complex64>) -> PyResult<Self> {
        WaveformBlock::new(n_tx, block_len, data)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn random_unit_modulus(n_tx: usize, block_len: usize, seed: u64) -> Self {
        Self {
            inner: WaveformBlock::random_unit_modulus(n_tx, block_len, seed),
        }
    }

    /// Reads `waveform.bin` and its JSON sidecar.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = experiment::read_waveform(path.as_ref()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_tx(&self) -> usize {
        self.inner.n_tx()
    }

    #[getter]
    fn block_len(&self) -> usize {
        self.inner.block_len()
    }

    fn to_list(&self) -> Vec<Complex64> {
        self.inner.as_slice().to_vec()
    }

    fn get(&self, antenna: usize, subpulse: usize) -> PyResult<Complex64> {
        if antenna >= self.inner.n_tx() || subpulse >= self.inner.block_len() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(antenna, subpulse))
    }

    #[pyo3(signature = (modulus = 1.0, tol = 1e-9))]
    fn is_constant_modulus(&self, modulus: f64, tol: f64) -> bool {
        self.inner.is_constant_modulus(modulus, tol)
    }

    fn __len__(&self) -> usize {
        self.inner.as_slice().len()
    }

    fn __repr__(&self) -> String {
        format!("Waveform(n_tx={}, block_len={})", self.inner.n_tx(), self.inner.block_len())
    }
}

/// Versioned experiment configuration.
#[pyclass(name = "Config", module = "dfrc", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Eight antennas, 32 subpulses, two users at 6 dB, weights (1, 4, 4).
    #[staticmethod]
    fn baseline() -> Self {
        Self {
            inner: ExperimentConfig::baseline(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ExperimentConfig::load(path.as_ref()).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn n_tx(&self) -> usize {
        self.inner.array.n_tx
    }

    #[getter]
    fn block_len(&self) -> usize {
        self.inner.block_len
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    /// Copy with the block length and lag window changed.
    fn with_block_len(&self, block_len: usize) -> PyResult<Self> {
        let mut c = self.inner.clone();
        c.block_len = block_len;
        c.scene.max_lag = c.scene.max_lag.min(block_len.max(1));
        c.validate().map_err(to_py)?;
        Ok(Self { inner: c })
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n_tx={}, block_len={}, solver={})",
            self.inner.array.n_tx,
            self.inner.block_len,
            self.inner.solver.name()
        )
    }
}

fn costs_dict<'py>(py: Python<'py>, c: &CostBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("bp", c.bp)?;
    d.set_item("ac", c.ac)?;
    d.set_item("cc", c.cc)?;
    d.set_item("sim", c.sim)?;
    d.set_item("total", c.total)?;
    Ok(d)
}

fn problem(cfg: &PyConfig, seed: u64) -> PyResult<DesignProblem> {
    DesignProblem::from_config(&cfg.inner, seed).map_err(to_py)
}

/// CI-feasible initial waveform for `seed`.
#[pyfunction]
fn initialize(config: &PyConfig, seed: u64) -> PyResult<PyWaveform> {
    let p = problem(config, seed)?;
    let init = p.initialize(seed).map_err(to_py)?;
    Ok(PyWaveform { inner: init.block })
}

/// Runs one solver (`mm`, `ladmm` or `radar_only`) and returns a summary dict
/// with the designed waveform under `"waveform"`.
#[pyfunction]
#[pyo3(signature = (config, seed = 0, solver = None))]
fn design<'py>(py: Python<'py>, config: &PyConfig, seed: u64, solver: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let kind = match solver {
        Some(s) => s.parse::<SolverKind>().map_err(to_py)?,
        None => config.inner.solver,
    };
    let p = problem(config, seed)?;
    let out = experiment::design(&p, kind, &config.inner.mm, &config.inner.ladmm, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("solver", kind.name())?;
    d.set_item("seed", seed)?;
    d.set_item("iterations", out.iterations)?;
    d.set_item("converged", out.converged)?;
    d.set_item("costs", costs_dict(py, &out.costs)?)?;
    d.set_item("initial_costs", costs_dict(py, &out.initial_costs)?)?;
    d.set_item("min_margin", out.margins.as_ref().map(|m| m.min_margin))?;
    d.set_item("slackness", out.slackness)?;
    d.set_item("wall_sec", out.wall_sec)?;
    d.set_item("waveform", PyWaveform { inner: out.block })?;
    Ok(d)
}

/// Weighted radar costs of `waveform` under the config's scene and weights.
#[pyfunction]
fn evaluate_costs<'py>(py: Python<'py>, config: &PyConfig, waveform: &PyWaveform) -> PyResult<Bound<'py, PyDict>> {
    let p = problem(config, 0)?;
    let obj = p.objective().map_err(to_py)?;
    if waveform.inner.n_tx() != obj.n_tx() || waveform.inner.block_len() != obj.block_len() {
        return Err(PyValueError::new_err("waveform shape does not match the config"));
    }
    costs_dict(py, &obj.evaluate(waveform.inner.as_slice()))
}

/// Smallest CI margin of `waveform` for run `seed` (negative means violated).
#[pyfunction]
fn min_ci_margin(config: &PyConfig, waveform: &PyWaveform, seed: u64) -> PyResult<f64> {
    let ci = problem(config, seed)?.constraints().map_err(to_py)?;
    ci.margins(&waveform.inner).map(|m| m.min_margin).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n_tx, angle_deg, spacing_wavelengths = 0.5))]
fn steering_vector(n_tx: usize, angle_deg: f64, spacing_wavelengths: f64) -> PyResult<Vec<Complex64>> {
    let g = ArrayGeometry::new(n_tx, n_tx, spacing_wavelengths).map_err(to_py)?;
    scenario::steering_vector(&g, angle_deg, ArraySide::Transmit).map_err(to_py)
}

/// Transmit beam gain at each angle.
#[pyfunction]
#[pyo3(signature = (waveform, angles_deg, spacing_wavelengths = 0.5))]
fn beam_pattern(waveform: &PyWaveform, angles_deg: Vec<f64>, spacing_wavelengths: f64) -> PyResult<Vec<f64>> {
    let n = waveform.inner.n_tx();
    let g = ArrayGeometry::new(n, n, spacing_wavelengths).map_err(to_py)?;
    angles_deg
        .iter()
        .map(|&a| costs::beam_gain(&waveform.inner, &g, a).map_err(to_py))
        .collect()
}

/// Sidelobe energy over `0 < |tau| < max_lag` divided by the zero-lag peak,
/// summed over the given angles.
#[pyfunction]
#[pyo3(signature = (waveform, angles_deg, max_lag, spacing_wavelengths = 0.5))]
fn normalized_isl(waveform: &PyWaveform, angles_deg: Vec<f64>, max_lag: usize, spacing_wavelengths: f64) -> PyResult<f64> {
    let n = waveform.inner.n_tx();
    let g = ArrayGeometry::new(n, n, spacing_wavelengths).map_err(to_py)?;
    costs::normalized_autocorrelation_isl(&waveform.inner, &g, &angles_deg, max_lag).map_err(to_py)
}

/// Row-absolute-sum majorizer `diag(|Q| 1)` of a Hermitian matrix given as rows.
#[pyfunction]
fn diagonal_majorizer(rows: Vec<Vec<Complex64>>) -> PyResult<Vec<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let q = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    mm::diagonal_majorizer(&q).map_err(to_py)
}

#[pyfunction]
fn cfar_threshold_factor(n_cells: usize, p_fa: f64) -> f64 {
    radar::cfar_threshold_factor(n_cells, p_fa)
}

#[pyfunction]
#[pyo3(signature = (powers, n_train = 4, n_guard = 2, p_fa = 1e-2))]
fn cfar_detect(powers: Vec<f64>, n_train: usize, n_guard: usize, p_fa: f64) -> PyResult<Vec<bool>> {
    radar::cfar_detect(&powers, &CfarConfig { n_train, n_guard, p_fa }).map_err(to_py)
}

/// Monte-Carlo Pd of the config's first scene object versus its RCS, as a
/// list of `(rcs_dbsm, pd)` pairs.
#[pyfunction]
#[pyo3(signature = (config, waveform, rcs_dbsm, trials = 500, seed = 0))]
fn detection_probability(
    config: &PyConfig,
    waveform: &PyWaveform,
    rcs_dbsm: Vec<f64>,
    trials: usize,
    seed: u64,
) -> PyResult<Vec<(f64, f64)>> {
    let c = &config.inner;
    let g = c.geometry().map_err(to_py)?;
    let pts = radar::detection_probability(
        &waveform.inner,
        &c.scene.to_scene(),
        &g,
        &rcs_dbsm,
        &c.evaluation.cfar,
        trials,
        seed,
    )
    .map_err(to_py)?;
    Ok(pts.iter().map(|p| (p.rcs_dbsm, p.pd)).collect())
}

/// Writes the artifact bundle for every seed; returns the run directories.
#[pyfunction]
fn run_experiment(config: &PyConfig) -> PyResult<Vec<String>> {
    let runs = experiment::run_experiment(&config.inner).map_err(to_py)?;
    Ok(runs.iter().map(|r| r.dir.display().to_string()).collect())
}

#[pymodule]
fn dfrc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWaveform>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(initialize, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_costs, m)?)?;
    m.add_function(wrap_pyfunction!(min_ci_margin, m)?)?;
    m.add_function(wrap_pyfunction!(steering_vector, m)?)?;
    m.add_function(wrap_pyfunction!(beam_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_isl, m)?)?;
    m.add_function(wrap_pyfunction!(diagonal_majorizer, m)?)?;
    m.add_function(wrap_pyfunction!(cfar_threshold_factor, m)?)?;
    m.add_function(wrap_pyfunction!(cfar_detect, m)?)?;
    m.add_function(wrap_pyfunction!(detection_probability, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
