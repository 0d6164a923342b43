//! Python bindings. Documents cross the boundary as JSON text or fixture
//! names; results come back as plain Python objects.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use vnetchat_core::allocator::{brute_force_solve, solve as core_solve};
use vnetchat_core::control::{update_params as core_update, UpdateRates};
use vnetchat_core::eval::run_sweep as core_sweep;
use vnetchat_core::fixtures;
use vnetchat_core::intent::{
    keyword_extract as core_keyword, load_dataset, parse_llm_response as core_parse, Endpoints, ExtractorKind,
    IntentExtractor, UpdateMarker,
};
use vnetchat_core::model::{load_topology, load_users, Placement, ServiceParams, Weights};
use vnetchat_core::session::{self, create_session, load_scenario, InfeasibilityMode, SessionConfig, SessionError};

create_exception!(vnetchat, InfeasibleError, PyException);
create_exception!(vnetchat, UpstreamUnavailableError, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn session_err(e: SessionError) -> PyErr {
    match e {
        SessionError::InitialInfeasible => InfeasibleError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Fixture name or literal document text.
fn doc(arg: &str) -> Vec<u8> {
    fixtures::by_name(arg).unwrap_or(arg).as_bytes().to_vec()
}

fn marker(m: (i8, i8)) -> PyResult<UpdateMarker> {
    UpdateMarker::from_i8(m.0, m.1).ok_or_else(|| value_err(format!("illegal marker {m:?}")))
}

fn pair(m: UpdateMarker) -> (i8, i8) {
    (m.cpu.as_i8(), m.latency_bound.as_i8())
}

fn kind(name: &str) -> PyResult<ExtractorKind> {
    name.parse().map_err(value_err)
}

#[pyfunction]
fn fixture(name: &str) -> PyResult<&'static str> {
    fixtures::by_name(name).ok_or_else(|| value_err(format!("unknown fixture '{name}'")))
}

#[pyfunction]
fn keyword_extract(text: &str) -> (i8, i8) {
    pair(core_keyword(text))
}

/// Raises ValueError when the response holds no legal marker object.
#[pyfunction]
fn parse_llm_response(text: &str) -> PyResult<(i8, i8)> {
    core_parse(text).map(pair).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (cpu_param, latency_bound, marker_, actual_cpu, actual_latency, alpha=2.0, beta=1.5))]
fn update_params(
    cpu_param: f64,
    latency_bound: f64,
    marker_: (i8, i8),
    actual_cpu: f64,
    actual_latency: f64,
    alpha: f64,
    beta: f64,
) -> PyResult<(f64, f64)> {
    let p = ServiceParams::new(cpu_param, latency_bound).map_err(value_err)?;
    let rates = UpdateRates::new(alpha, beta).map_err(value_err)?;
    let out = core_update(&p, marker(marker_)?, actual_cpu, actual_latency, &rates).map_err(value_err)?;
    Ok((out.cpu_param, out.latency_bound))
}

fn solve_with<'py>(
    py: Python<'py>,
    topology: &str,
    users: &str,
    weights: (f64, f64, f64),
    prev: Option<&str>,
    brute: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let t = load_topology(&doc(topology)).map_err(value_err)?;
    let (users, params) = load_users(&doc(users)).map_err(value_err)?;
    let w = Weights::new(weights.0, weights.1, weights.2).map_err(value_err)?;
    let prev: Placement = match prev {
        Some(p) => serde_json::from_str(p).map_err(value_err)?,
        None => Placement::new(),
    };
    let f = if brute { brute_force_solve } else { core_solve };
    let out = py.detach(|| f(&t, &users, &params, &prev, &w)).map_err(value_err)?;
    to_py(py, &out)
}

/// Exact placement and routing. `topology` and `users` are fixture names or
/// JSON text; `prev` is a JSON map of user id to datacenter id.
#[pyfunction]
#[pyo3(signature = (topology, users, weights=(1.0, 0.01, 0.05), prev=None))]
fn solve<'py>(
    py: Python<'py>,
    topology: &str,
    users: &str,
    weights: (f64, f64, f64),
    prev: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    solve_with(py, topology, users, weights, prev, false)
}

#[pyfunction]
#[pyo3(signature = (topology, users, weights=(1.0, 0.01, 0.05), prev=None))]
fn brute_force<'py>(
    py: Python<'py>,
    topology: &str,
    users: &str,
    weights: (f64, f64, f64),
    prev: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    solve_with(py, topology, users, weights, prev, true)
}

#[pyfunction]
#[pyo3(signature = (extractor="keyword", train_sizes=vec![30, 20, 10, 5, 3], seed=42, dataset="appendix_a"))]
fn run_sweep<'py>(
    py: Python<'py>,
    extractor: &str,
    train_sizes: Vec<usize>,
    seed: u64,
    dataset: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let data = load_dataset(&doc(dataset)).map_err(value_err)?;
    let k = kind(extractor)?;
    let rows = py
        .detach(|| core_sweep(&data, k, &train_sizes, seed, &Endpoints::from_env()))
        .map_err(|e| match e {
            vnetchat_core::eval::EvalError::Unavailable(_) => UpstreamUnavailableError::new_err(e.to_string()),
            other => value_err(other),
        })?;
    to_py(py, &rows)
}

/// A chat session: queue prompts, then run steps.
#[pyclass]
struct Session {
    inner: session::Session,
    extractor: Arc<dyn IntentExtractor>,
}

fn extractor_for(config: &SessionConfig) -> PyResult<Arc<dyn IntentExtractor>> {
    config.extractor(&Endpoints::from_env()).map_err(value_err)
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (topology="internet2-like", users="single-user", mode="arbitrated", extractor="keyword", weights=None))]
    fn new(topology: &str, users: &str, mode: &str, extractor: &str, weights: Option<(f64, f64, f64)>) -> PyResult<Self> {
        let t = load_topology(&doc(topology)).map_err(value_err)?;
        let (users, params) = load_users(&doc(users)).map_err(value_err)?;
        let mode: InfeasibilityMode = mode.parse().map_err(value_err)?;
        let mut config = SessionConfig {
            mode,
            extractor: kind(extractor)?,
            ..Default::default()
        };
        if let Some(w) = weights {
            config.weights = Weights::new(w.0, w.1, w.2).map_err(value_err)?;
        }
        let extractor = extractor_for(&config)?;
        let inner = create_session(t, users, params, config).map_err(session_err)?;
        Ok(Session { inner, extractor })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn chat_step(&self) -> usize {
        self.inner.chat_step
    }

    fn submit_prompt(&mut self, user: u32, text: &str) -> PyResult<usize> {
        self.inner
            .submit_prompt(vnetchat_core::model::UserId(user), text)
            .map_err(session_err)
    }

    fn run_step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.run_step_with(self.extractor.as_ref()).map_err(session_err)?;
        to_py(py, &r)
    }

    /// Runs a scenario script (fixture name or JSON text); returns the step results.
    fn replay<'py>(&mut self, py: Python<'py>, scenario: &str) -> PyResult<Bound<'py, PyAny>> {
        let script = load_scenario(&doc(scenario)).map_err(session_err)?;
        let steps = session::replay(&mut self.inner, &script, self.extractor.as_ref()).map_err(session_err)?;
        to_py(py, &steps)
    }

    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.snapshot())
    }

    #[staticmethod]
    fn restore(data: &[u8]) -> PyResult<Self> {
        let inner = session::Session::restore(data).map_err(session_err)?;
        let extractor = extractor_for(&inner.config)?;
        Ok(Session { inner, extractor })
    }
}

#[pymodule]
fn vnetchat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    m.add_function(wrap_pyfunction!(keyword_extract, m)?)?;
    m.add_function(wrap_pyfunction!(parse_llm_response, m)?)?;
    m.add_function(wrap_pyfunction!(update_params, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_class::<Session>()?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("UpstreamUnavailableError", m.py().get_type::<UpstreamUnavailableError>())?;
    Ok(())
}
