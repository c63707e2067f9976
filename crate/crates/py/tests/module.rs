use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module<R>(f: impl for<'py> FnOnce(Python<'py>, &Bound<'py, PyModule>) -> PyResult<R>) -> R {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "homog")?;
        homog::homog(&m)?;
        f(py, &m)
    })
    .unwrap()
}

#[test]
fn effective_coefficient_and_fit() {
    let (g0, slope) = with_module(|_, m| {
        let eff = m.getattr("effective")?.call1((r#"{"preset": "sine_g", "cell": {"resolution": 64}}"#,))?;
        let g0: f64 = eff.get_item("g0")?.get_item(0)?.get_item(0)?.get_item(0)?.extract()?;
        let pts: Vec<(f64, f64)> = (4..8).map(|k| 2f64.powi(-k)).map(|e| (e, 3.0 * e * e)).collect();
        let (slope, _, _): (f64, f64, f64) = m.getattr("fit_rate")?.call1((pts,))?.extract()?;
        Ok((g0, slope))
    });
    assert!((g0 - 0.5).abs() < 1e-8, "{g0}");
    assert!((slope - 2.0).abs() < 1e-10);
}

#[test]
fn validation_errors_raise_value_error() {
    let is_value_error = with_module(|py, m| {
        let err = m.getattr("effective")?.call1((r#"{"preset": "no_such_preset"}"#,)).unwrap_err();
        Ok(err.is_instance_of::<PyValueError>(py))
    });
    assert!(is_value_error);
}

#[test]
fn presets_listed() {
    let names: Vec<String> = with_module(|_, m| m.getattr("presets")?.call0()?.extract());
    assert!(names.iter().any(|n| n == "sine_g"));
}
