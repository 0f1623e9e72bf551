//! Python bindings: load a config, then ask for its stability report,
//! moment model, simulation results or verification checks as plain
//! Python dicts and lists.

use std::path::Path;

use asyncnet::cli::{self, Check, Experiment, Overrides};
use asyncnet::crcalc::{self, ComplexVec};
use asyncnet::engine::{steady_state, Estimate, Series};
use asyncnet::stability::{bound_envelope, StabilityReport};
use asyncnet::Error;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Parse { .. }
        | Error::Config { .. }
        | Error::Validation(_)
        | Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A validated experiment: network, costs, randomness models and run settings.
#[pyclass(name = "Experiment", module = "asyncnet", frozen)]
struct PyExperiment {
    inner: Experiment,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let inner = cli::parse_config(Path::new(path)).map_err(to_py_err)?;
        Ok(PyExperiment { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = cli::parse_config_str(text, Path::new("<string>")).map_err(to_py_err)?;
        Ok(PyExperiment { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.config).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Copy with every step law rescaled so the largest step bound is `mu_max`.
    fn with_max_step(&self, mu_max: f64) -> PyResult<Self> {
        let inner = self.inner.with_max_step(mu_max).map_err(to_py_err)?;
        Ok(PyExperiment { inner })
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.network.n_agents()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.network.dim()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.noise.alpha
    }

    #[getter]
    fn sigma_v_sq(&self) -> f64 {
        self.inner.noise.sigma_v_sq
    }

    #[getter]
    fn w_opt(&self) -> Vec<Complex64> {
        self.inner.network.w_opt().as_slice().to_vec()
    }

    fn __repr__(&self) -> String {
        let r = &self.inner.config.run;
        format!(
            "Experiment(agents={}, dim={}, trials={}, horizon={})",
            self.n_agents(),
            self.dim(),
            r.n_trials,
            r.horizon
        )
    }
}

fn report_dict<'py>(py: Python<'py>, r: &StabilityReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in [
        ("alpha", r.alpha),
        ("sigma_v_sq", r.sigma_v_sq),
        ("alpha4", r.alpha4),
        ("sigma_v_sq4", r.sigma_v_sq4),
        ("beta", r.beta),
        ("theta", r.theta),
        ("kappa", r.kappa),
        ("nu_o", r.nu_o),
        ("nu", r.nu),
        ("b", r.b),
        ("b4", r.b4),
        ("envelope_limit", r.envelope_limit()),
        ("ms_bound", r.ms_bound()),
    ] {
        d.set_item(k, v)?;
    }
    d.set_item("ms_condition", r.ms_condition.as_str())?;
    d.set_item("ms_sufficient", r.ms_sufficient.map(|v| v.as_str()))?;
    d.set_item("fourth_condition", r.fourth_condition.as_str())?;
    d.set_item("model_specific_bound", r.model_specific_bound.map(|v| v.as_str()))?;
    d.set_item("relaxed_condition", r.relaxed_condition.as_str())?;
    let agents = PyList::empty(py);
    for a in &r.agents {
        let ad = PyDict::new(py);
        ad.set_item("mbar", a.mbar)?;
        ad.set_item("c_mu", a.c_mu)?;
        ad.set_item("lambda_min", a.lambda_min)?;
        ad.set_item("lambda_max", a.lambda_max)?;
        ad.set_item("gamma_sq", a.gamma_sq)?;
        ad.set_item("ms_ratio", a.ms_ratio)?;
        ad.set_item("ms_limit", a.ms_limit)?;
        ad.set_item("fourth_ratio", a.fourth_ratio)?;
        ad.set_item("fourth_limit", a.fourth_limit)?;
        ad.set_item("mu_upper", a.mu_upper)?;
        ad.set_item("model_bound", a.model_bound)?;
        agents.append(ad)?;
    }
    d.set_item("agents", agents)?;
    Ok(d)
}

/// Stability constants and verdicts for an experiment.
#[pyfunction]
fn stability<'py>(py: Python<'py>, exp: &PyExperiment) -> PyResult<Bound<'py, PyDict>> {
    let r = cli::stability_report(&exp.inner).map_err(to_py_err)?;
    report_dict(py, &r)
}

/// The upper envelope on the worst-agent MSD, starting from `eps0_sq`.
#[pyfunction]
fn envelope(exp: &PyExperiment, eps0_sq: f64, horizon: usize) -> PyResult<Vec<f64>> {
    let r = cli::stability_report(&exp.inner).map_err(to_py_err)?;
    let env = bound_envelope(&r, eps0_sq, horizon, r.sigma_v_sq).map_err(to_py_err)?;
    Ok(env.values)
}

/// Analytic first and second moments of the step-size and combination
/// matrices. `c_a` is returned as `(row, col, value)` nonzeros.
#[pyfunction]
fn moments<'py>(py: Python<'py>, exp: &PyExperiment) -> PyResult<Bound<'py, PyDict>> {
    let ms = cli::analytic(&exp.inner).map_err(to_py_err)?;
    let d = PyDict::new(py);
    let abar: Vec<Vec<f64>> = ms.abar.row_iter().map(|r| r.iter().copied().collect()).collect();
    d.set_item("mbar", ms.mbar.clone())?;
    d.set_item("abar", abar)?;
    d.set_item("mu_moments", ms.mu_moments.iter().map(|m| m.to_vec()).collect::<Vec<_>>())?;
    d.set_item("c_a", ms.c_a.nonzeros())?;
    d.set_item("c_m", ms.c_m.nonzeros())?;
    Ok(d)
}

fn series_dict<'py>(py: Python<'py>, s: &Series) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean.clone())?;
    d.set_item("se", s.se.clone())?;
    Ok(d)
}

fn estimate(e: &Estimate) -> (f64, f64) {
    (e.value, e.se)
}

fn checks_list<'py>(py: Python<'py>, checks: &[Check]) -> PyResult<Bound<'py, PyList>> {
    let out = PyList::empty(py);
    for c in checks {
        let d = PyDict::new(py);
        d.set_item("suite", &c.suite)?;
        d.set_item("check", &c.name)?;
        d.set_item("status", c.status.as_str())?;
        d.set_item("measured", c.measured)?;
        d.set_item("se", c.se)?;
        d.set_item("tolerance", c.tolerance)?;
        d.set_item("detail", &c.detail)?;
        out.append(d)?;
    }
    Ok(out)
}

fn overrides(seed: Option<u64>, trials: Option<usize>, horizon: Option<usize>, threads: Option<usize>) -> Overrides {
    Overrides {
        seed,
        trials,
        horizon,
        threads,
    }
}

/// Monte-Carlo run. Returns the network-level series (`msd_max`,
/// `disagreement`, `m4_max`), per-trial divergence flags, the steady-state
/// window estimates as `(value, se)` pairs and the bound checks.
#[pyfunction]
#[pyo3(signature = (exp, trials=None, horizon=None, seed=None, threads=None))]
fn simulate<'py>(
    py: Python<'py>,
    exp: &PyExperiment,
    trials: Option<usize>,
    horizon: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let o = overrides(seed, trials, horizon, threads);
    let sim = py.detach(|| cli::simulate(&exp.inner, &o)).map_err(to_py_err)?;
    let rec = &sim.record;
    let d = PyDict::new(py);
    d.set_item("msd_max", series_dict(py, &rec.msd_max)?)?;
    d.set_item("disagreement", series_dict(py, &rec.network_disagreement)?)?;
    d.set_item("m4_max", series_dict(py, &rec.m4_max)?)?;
    d.set_item("seeds", rec.seeds.clone())?;
    d.set_item("diverged", rec.diverged.clone())?;
    d.set_item("excluded", rec.excluded.clone())?;
    let steady = match steady_state(rec, exp.inner.config.run.window_fraction) {
        Ok(ss) => {
            let s = PyDict::new(py);
            s.set_item("msd_max", estimate(&ss.msd_max))?;
            s.set_item("m4_max", estimate(&ss.m4_max))?;
            s.set_item("disagreement", estimate(&ss.disagreement))?;
            s.set_item("ratio", estimate(&ss.ratio))?;
            s.set_item("window_start", ss.window_start)?;
            Some(s)
        }
        Err(_) => None,
    };
    d.set_item("steady", steady)?;
    d.set_item("report", report_dict(py, &sim.report)?)?;
    d.set_item("checks", checks_list(py, &sim.checks)?)?;
    Ok(d)
}

/// Runs one verification suite (or `"all"`) and returns its checks.
#[pyfunction]
#[pyo3(signature = (exp, suite="all", trials=None, horizon=None, seed=None, threads=None))]
fn verify<'py>(
    py: Python<'py>,
    exp: &PyExperiment,
    suite: &str,
    trials: Option<usize>,
    horizon: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyList>> {
    let o = overrides(seed, trials, horizon, threads);
    let checks = py.detach(|| cli::run_suite(&exp.inner, suite, &o)).map_err(to_py_err)?;
    checks_list(py, &checks)
}

/// `w ↦ [Re w; Im w]`.
#[pyfunction]
fn embed_real(w: Vec<Complex64>) -> PyResult<Vec<f64>> {
    let w = ComplexVec::new(w).map_err(to_py_err)?;
    Ok(crcalc::embed_real(&w).as_slice().to_vec())
}

/// `w ↦ [w; conj w]`.
#[pyfunction]
fn embed_conjugate(w: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
    let w = ComplexVec::new(w).map_err(to_py_err)?;
    Ok(crcalc::embed_conjugate(&w).as_dvector().iter().copied().collect())
}

#[pymodule(name = "asyncnet")]
fn asyncnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(envelope, m)?)?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(embed_real, m)?)?;
    m.add_function(wrap_pyfunction!(embed_conjugate, m)?)?;
    m.add("SUITES", cli::SUITES.to_vec())?;
    Ok(())
}
