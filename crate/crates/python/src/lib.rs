//! Python bindings: scenarios, controls, simulation, optimization and
//! certificates. Structured results come back as plain dicts and lists.

// The pyo3 0.22 function macros trip this lint on their own PyErr conversions.
#![allow(clippy::useless_conversion)]

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use impdelay as core;

create_exception!(impdelay_py, ImpdelayError, PyValueError);

fn err(e: core::Error) -> PyErr {
    ImpdelayError::new_err(format!("{}: {e}", e.kind()))
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<PyObject> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_py(py),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_py(py),
            None => n.as_f64().unwrap_or(f64::NAN).into_py(py),
        },
        Value::String(s) => s.into_py(py),
        Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_py(py)
        }
    })
}

fn serialize(py: Python<'_>, v: impl serde::Serialize) -> PyResult<PyObject> {
    let value = serde_json::to_value(v).map_err(|e| ImpdelayError::new_err(e.to_string()))?;
    to_py(py, &value)
}

/// A scenario document: the system, cost, constraints and stored controls.
#[pyclass(name = "Scenario", module = "impdelay_py")]
#[derive(Clone)]
struct PyScenario {
    doc: core::ScenarioDoc,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_str(text: &str) -> PyResult<Self> {
        Ok(PyScenario {
            doc: core::load_scenario(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(PyScenario {
            doc: core::read_scenario_file(path).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.doc.scenario.n
    }

    #[getter]
    fn segments(&self) -> usize {
        self.doc.scenario.segments
    }

    #[getter]
    fn delay(&self) -> f64 {
        self.doc.scenario.delay
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.doc.scenario.horizon()
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.doc.scenario.budget
    }

    fn family_names(&self) -> Vec<String> {
        self.doc.family_names()
    }

    /// The stored control, or a named family of it.
    #[pyo3(signature = (family=None))]
    fn control(&self, family: Option<&str>) -> PyResult<PyControl> {
        Ok(PyControl {
            spec: self.doc.control(family).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        let sc = &self.doc.scenario;
        format!(
            "Scenario(n={}, N={}, h={}, K={})",
            sc.n, sc.segments, sc.delay, sc.budget
        )
    }
}

/// An impulsive control: a measure plus its attached controls.
#[pyclass(name = "Control", module = "impdelay_py")]
#[derive(Clone)]
struct PyControl {
    spec: core::ControlSpec,
}

#[pymethods]
impl PyControl {
    /// Parses a control document against a scenario.
    #[staticmethod]
    fn parse(text: &str, scenario: &PyScenario) -> PyResult<Self> {
        Ok(PyControl {
            spec: core::parse_control(text, &scenario.doc.scenario).map_err(err)?,
        })
    }

    #[pyo3(signature = (header=Vec::new()))]
    fn to_document(&self, header: Vec<String>) -> String {
        core::write_control(&self.spec.measure, &self.spec.family, &header)
    }

    #[getter]
    fn tv_norm(&self) -> f64 {
        self.spec.measure.tv_norm()
    }

    #[getter]
    fn atoms(&self) -> Vec<(f64, f64)> {
        self.spec.measure.atoms().to_vec()
    }

    /// Admissibility violations as dicts; empty when the control is valid.
    fn validate(&self, py: Python<'_>, scenario: &PyScenario) -> PyResult<PyObject> {
        let report = core::validate_impulsive_control(&self.spec.measure, &self.spec.family, &scenario.doc.scenario);
        let list = PyList::empty_bound(py);
        for v in &report.violations {
            let d = PyDict::new_bound(py);
            d.set_item("clause", v.clause.to_string())?;
            d.set_item("r", v.r)?;
            d.set_item("segment", v.segment)?;
            d.set_item("residual", v.residual)?;
            d.set_item("message", &v.message)?;
            list.append(d)?;
        }
        Ok(list.into_py(py))
    }

    fn roundtrip_residual(&self, scenario: &PyScenario) -> PyResult<f64> {
        core::roundtrip_residual(&self.spec.measure, &self.spec.family, &scenario.doc.scenario).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Control(tv_norm={}, atoms={})",
            self.spec.measure.tv_norm(),
            self.spec.measure.atoms().len()
        )
    }
}

/// Extended trajectory as a dict with `samples`, `jumps`, `arcs`, `endpoint`.
#[pyfunction]
#[pyo3(signature = (scenario, control, step=1e-3, points=201, strict=false))]
fn simulate(
    py: Python<'_>,
    scenario: &PyScenario,
    control: &PyControl,
    step: f64,
    points: usize,
    strict: bool,
) -> PyResult<PyObject> {
    let opts = core::SimOptions {
        step,
        output_points: points,
        strict_alignment: strict,
        ..core::SimOptions::default()
    };
    let tr = py
        .allow_threads(|| {
            core::simulate_extended(
                &scenario.doc.scenario,
                &control.spec.measure,
                &control.spec.family,
                &opts,
            )
        })
        .map_err(err)?;
    serialize(py, tr)
}

/// Minimizes the terminal cost. Returns `(control, info)` where `info` holds
/// the cost, mass, multipliers and convergence log.
#[pyfunction]
#[pyo3(signature = (scenario, grid=16, tol=1e-9, max_iters=400, restarts=0, seed=0, warm_start=None, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn optimize(
    py: Python<'_>,
    scenario: &PyScenario,
    grid: usize,
    tol: f64,
    max_iters: usize,
    restarts: usize,
    seed: u64,
    warm_start: Option<&PyControl>,
    jobs: usize,
) -> PyResult<(PyControl, PyObject)> {
    let sc = &scenario.doc.scenario;
    let warm_start = match warm_start {
        Some(c) => {
            let rc = core::to_reparam(&c.spec.measure, &c.spec.family, sc).map_err(err)?;
            Some(core::transcribe(sc, grid).sample(&rc).map_err(err)?)
        }
        None => None,
    };
    let opts = core::SolveOptions {
        pieces: grid,
        tol,
        max_iters,
        restarts,
        seed,
        warm_start,
        jobs,
        ..core::SolveOptions::default()
    };
    let sol = py.allow_threads(|| core::solve(sc, &opts)).map_err(err)?;
    let (measure, family) = core::from_reparam(&sol.process.controls, sc).map_err(err)?;
    let info = serde_json::json!({
        "cost": sol.cost,
        "mass": sol.mass,
        "target_distance": sol.target_distance,
        "multipliers": sol.multipliers,
        "x": sol.x,
        "log": sol.log,
    });
    Ok((
        PyControl {
            spec: core::ControlSpec { measure, family },
        },
        to_py(py, &info)?,
    ))
}

/// Maximum-principle certificate of a candidate as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, control, step=1e-3))]
fn check_pmp(py: Python<'_>, scenario: &PyScenario, control: &PyControl, step: f64) -> PyResult<PyObject> {
    let sc = &scenario.doc.scenario;
    let opts = core::SimOptions {
        step,
        ..core::SimOptions::default()
    };
    let cert = py
        .allow_threads(|| {
            let rc = core::to_reparam(&control.spec.measure, &control.spec.family, sc)?;
            let rp = core::integrate_reparam(sc, &rc, &opts)?;
            core::certify(&rp, sc, &core::Tolerances::default(), opts.bound).map(|(_, c)| c)
        })
        .map_err(err)?;
    serialize(py, cert)
}

#[pymodule]
fn impdelay_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyControl>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(check_pmp, m)?)?;
    m.add("ImpdelayError", m.py().get_type_bound::<ImpdelayError>())?;
    Ok(())
}
