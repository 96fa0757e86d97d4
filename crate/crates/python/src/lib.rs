//! Python module `risnoma_py`: configuration, scenario generation, the
//! three optimizers and the experiment runner.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use risnoma::active::{agm_upper_bound, algorithm1, taylor_lower_bound, ActiveInit};
use risnoma::comm::{ris_covariance, BeamState, RateReport};
use risnoma::config::{parse_config, Profile, SystemConfig};
use risnoma::geometry::{build_scenario, ChannelSet};
use risnoma::joint::{algorithm3, baseline_ris_isac};
use risnoma::linalg::{CMat, CVec};
use risnoma::passive::{algorithm2, update_epsilon};
use risnoma::sensing::{beampattern_gain_vectors, AngleGrid};
use risnoma::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Shape(_) | Error::State(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

type Rows = Vec<Vec<Complex64>>;

fn to_rows(m: &CMat) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn from_rows(rows: &Rows) -> PyResult<CMat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(CMat::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_vec(v: &CVec) -> Vec<Complex64> {
    v.iter().cloned().collect()
}

/// Validated system configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SystemConfig,
}

#[pymethods]
impl PyConfig {
    /// Built-in profile, `"desk"` or `"paper"`.
    #[staticmethod]
    fn profile(name: &str) -> PyResult<Self> {
        let p = match name {
            "desk" => Profile::Desk,
            "paper" => Profile::Paper,
            _ => return Err(PyValueError::new_err(format!("unknown profile {name:?}"))),
        };
        Ok(PyConfig { inner: SystemConfig::profile(p) })
    }

    /// Parses a JSON configuration document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_config(text).map(|inner| PyConfig { inner }).map_err(py_err)
    }

    fn with_n_ris(&self, m: usize) -> Self {
        PyConfig { inner: self.inner.with_n_ris(m) }
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Linear-unit configuration as JSON.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn n_tx(&self) -> usize {
        self.inner.n_tx
    }

    #[getter]
    fn n_ris(&self) -> usize {
        self.inner.n_ris
    }

    #[getter]
    fn n_clusters(&self) -> usize {
        self.inner.n_clusters
    }

    #[getter]
    fn p_max(&self) -> f64 {
        self.inner.p_max
    }

    #[getter]
    fn noise_power(&self) -> f64 {
        self.inner.noise_power
    }

    #[getter]
    fn spacing_ratio(&self) -> f64 {
        self.inner.spacing_ratio
    }

    /// Interested angles (radians) of the sensing objective.
    fn interested_angles(&self) -> Vec<f64> {
        AngleGrid::new(&self.inner).interested_angles()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n_tx={}, n_ris={}, n_clusters={}, hash={})",
            self.inner.n_tx,
            self.inner.n_ris,
            self.inner.n_clusters,
            self.inner.hash()
        )
    }
}

/// One seeded channel draw.
#[pyclass(name = "Channels")]
struct PyChannels {
    inner: ChannelSet,
    seed: u64,
}

#[pymethods]
impl PyChannels {
    #[new]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let (_, inner) = build_scenario(&config.inner, seed).map_err(py_err)?;
        Ok(PyChannels { inner, seed })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.seed
    }

    /// BS-RIS channel, `M × N_T` row lists.
    #[getter]
    fn g(&self) -> Rows {
        to_rows(&self.inner.g)
    }

    #[getter]
    fn near(&self) -> Vec<Vec<Complex64>> {
        self.inner.near.iter().map(to_vec).collect()
    }

    #[getter]
    fn far(&self) -> Vec<Vec<Complex64>> {
        self.inner.far.iter().map(to_vec).collect()
    }
}

/// Beamformers, power splits and RIS configuration.
#[pyclass(name = "BeamState")]
struct PyBeamState {
    inner: BeamState,
}

#[pymethods]
impl PyBeamState {
    #[getter]
    fn w(&self) -> Vec<Vec<Complex64>> {
        self.inner.w.iter().map(to_vec).collect()
    }

    #[getter]
    fn w_cov(&self) -> Vec<Rows> {
        self.inner.w_cov.iter().map(to_rows).collect()
    }

    #[getter]
    fn v(&self) -> Vec<Complex64> {
        to_vec(&self.inner.v)
    }

    #[getter]
    fn a_near(&self) -> Vec<f64> {
        self.inner.a_near.clone()
    }

    #[getter]
    fn a_far(&self) -> Vec<f64> {
        self.inner.a_far.clone()
    }

    fn total_power(&self) -> f64 {
        self.inner.total_power()
    }

    /// Rates at the extracted vectors as a JSON string.
    fn rates(&self, channels: &PyChannels, config: &PyConfig) -> PyResult<String> {
        let report = RateReport::evaluate(&self.inner.extracted(), &channels.inner, &config.inner).map_err(py_err)?;
        serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Joint NOMA design; returns `(state, chi, outer_trace)`.
#[pyfunction]
fn joint_design(channels: &PyChannels, config: &PyConfig, seed: u64) -> PyResult<(PyBeamState, f64, Vec<f64>)> {
    let out = algorithm3(&channels.inner, &config.inner, seed).map_err(py_err)?;
    Ok((PyBeamState { inner: out.state }, out.chi, out.outer_trace))
}

/// Transmit design for a fixed RIS vector; returns `(w_cov, a_near, chi, trace)`.
#[pyfunction]
fn transmit_design(
    channels: &PyChannels,
    v: Vec<Complex64>,
    config: &PyConfig,
) -> PyResult<(Vec<Rows>, Vec<f64>, f64, Vec<f64>)> {
    let v_cov = ris_covariance(&CVec::from_vec(v));
    let out = algorithm1(&channels.inner, &v_cov, &config.inner, ActiveInit::Default).map_err(py_err)?;
    Ok((out.w_cov.iter().map(to_rows).collect(), out.a_near, out.chi, out.trace))
}

/// RIS design for fixed beams; returns `(v, chi, trace)`.
#[pyfunction]
fn ris_design(
    channels: &PyChannels,
    w_cov: Vec<Rows>,
    a_near: Vec<f64>,
    v_init: Vec<Complex64>,
    config: &PyConfig,
) -> PyResult<(Vec<Complex64>, f64, Vec<f64>)> {
    let w: Vec<CMat> = w_cov.iter().map(from_rows).collect::<PyResult<_>>()?;
    let v0 = ris_covariance(&CVec::from_vec(v_init));
    let out = algorithm2(&channels.inner, &w, &a_near, &config.inner, &v0).map_err(py_err)?;
    Ok((to_vec(&out.v), out.chi, out.trace))
}

/// Orthogonal-beam reference design; returns `(chi, outer_trace)`.
#[pyfunction]
fn baseline_design(channels: &PyChannels, config: &PyConfig, seed: u64) -> PyResult<(f64, Vec<f64>)> {
    let out = baseline_ris_isac(&channels.inner, &config.inner, seed).map_err(py_err)?;
    Ok((out.chi, out.outer_trace))
}

/// Full NOMA trial record as a JSON string.
#[pyfunction]
fn run_trial(config: &PyConfig, seed: u64) -> PyResult<String> {
    let r = risnoma::experiment::run_trial(&config.inner, seed).map_err(py_err)?;
    serde_json::to_string(&r).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Beampattern gain toward `theta` for beam vectors `w` and RIS vector `v`.
#[pyfunction]
fn beampattern_gain(v: Vec<Complex64>, w: Vec<Vec<Complex64>>, g: Rows, theta: f64, spacing_ratio: f64) -> PyResult<f64> {
    let g = from_rows(&g)?;
    if v.len() != g.nrows() || w.iter().any(|x| x.len() != g.ncols()) {
        return Err(PyValueError::new_err("dimension mismatch"));
    }
    let w: Vec<CVec> = w.into_iter().map(CVec::from_vec).collect();
    Ok(beampattern_gain_vectors(&CVec::from_vec(v), &w, &g, theta, spacing_ratio))
}

#[pyfunction]
fn taylor_bound(eta: f64, eta_tilde: f64) -> f64 {
    taylor_lower_bound(eta, eta_tilde)
}

#[pyfunction]
fn agm_bound(a: f64, t: f64, beta: f64) -> f64 {
    agm_upper_bound(a, t, beta)
}

/// `min(1, λ_max(V)/Tr(V) + ρ)` for a Hermitian `V` given as row lists.
#[pyfunction]
fn epsilon_update(v_cov: Rows, rho: f64) -> PyResult<f64> {
    Ok(update_epsilon(&from_rows(&v_cov)?, rho))
}

#[pymodule]
fn risnoma_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", risnoma::experiment::VERSION)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyChannels>()?;
    m.add_class::<PyBeamState>()?;
    m.add_function(wrap_pyfunction!(joint_design, m)?)?;
    m.add_function(wrap_pyfunction!(transmit_design, m)?)?;
    m.add_function(wrap_pyfunction!(ris_design, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_design, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    m.add_function(wrap_pyfunction!(beampattern_gain, m)?)?;
    m.add_function(wrap_pyfunction!(taylor_bound, m)?)?;
    m.add_function(wrap_pyfunction!(agm_bound, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_update, m)?)?;
    Ok(())
}
