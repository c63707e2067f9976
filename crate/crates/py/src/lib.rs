//! Python module `homog`: JSON-config entry points plus rate helpers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use homog_core::config::{self, RunConfig};
use homog_core::convergence_lab;
use homog_core::HomogError;

fn to_py(e: HomogError) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_value<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse(config_json: &str) -> PyResult<RunConfig> {
    RunConfig::from_json(config_json).map_err(to_py)
}

/// Names of the built-in coefficient presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    homog_core::presets::PRESET_NAMES.to_vec()
}

/// Cell problems for a JSON run config; returns the summary dict.
#[pyfunction]
fn cell<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse(config_json)?;
    let (out, _) = py.detach(|| config::run_cell(&cfg)).map_err(to_py)?;
    json_value(py, &out.summary)
}

/// Effective coefficients as a dict.
#[pyfunction]
fn effective<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse(config_json)?;
    let (out, _) = py.detach(|| config::run_effective(&cfg)).map_err(to_py)?;
    json_value(py, &out)
}

/// One (ε, t) snapshot: metadata plus x, u_eps, u0 and v_eps as lists of complex numbers.
#[pyfunction]
fn evolve<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse(config_json)?;
    let out = py.detach(|| config::run_evolve(&cfg)).map_err(to_py)?;
    let d = json_value(py, &out)?;
    let cplx = |v: &[homog_core::linalg::C64]| v.iter().map(|z| pyo3::types::PyComplex::from_doubles(py, z.re, z.im)).collect::<Vec<_>>();
    d.set_item("x", out.bundle.x.clone())?;
    d.set_item("u_eps", cplx(&out.bundle.u_eps))?;
    d.set_item("u0", cplx(&out.bundle.u0))?;
    d.set_item("v_eps", cplx(&out.bundle.v_eps))?;
    Ok(d)
}

/// Runs the configured sweep and returns the report dict (timings excluded).
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse(config_json)?;
    let (report, _) = py.detach(|| config::run_sweep(&cfg)).map_err(to_py)?;
    json_value(py, &report)
}

/// Least-squares slope of ln(value) against ln(ε): (slope, intercept, rms_residual).
#[pyfunction]
fn fit_rate(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = convergence_lab::fit_rate(&points).map_err(to_py)?;
    Ok((f.slope, f.intercept, f.rms_residual))
}

#[pyfunction]
fn theta(eps: f64, r: f64) -> f64 {
    convergence_lab::theta(eps, r)
}

#[pyfunction]
fn omega(eps: f64, r: f64) -> f64 {
    convergence_lab::omega(eps, r)
}

#[pymodule]
pub fn homog(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(cell, m)?)?;
    m.add_function(wrap_pyfunction!(effective, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    m.add_function(wrap_pyfunction!(omega, m)?)?;
    Ok(())
}
