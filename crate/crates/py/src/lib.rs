//! Python bindings: configs, graphs, single nodes, simulation and sweeps.

use std::collections::BTreeMap;

use brb_core::adversary::{AdversaryPlan, Strategy};
use brb_core::bracha;
use brb_core::engine::{NodeState, SendAction};
use brb_core::experiment::{run_experiment as run_sweep, ExperimentConfig};
use brb_core::sim::{check_properties as check, run_spec, LinkModel, RunReport, RunSpec};
use brb_core::topology::{generate_regular_graph, vertex_connectivity};
use brb_core::{Graph, ModificationConfig, ProcessId, TopologySpec};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A set of enabled modifications.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ModificationConfig,
}

#[pymethods]
impl PyConfig {
    /// `spec` is a preset name, `preset+toggle+...`, or a `+`-list of toggles.
    #[new]
    #[pyo3(signature = (spec = "bd"))]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self {
            inner: spec.parse().map_err(err)?,
        })
    }

    fn set(&mut self, name: &str, on: bool) -> PyResult<()> {
        self.inner.set(name, on).map_err(err)
    }

    fn enabled(&self) -> Vec<&'static str> {
        self.inner.enabled()
    }

    #[getter]
    fn local_id_bits(&self) -> u8 {
        self.inner.local_id_bits
    }

    #[setter]
    fn set_local_id_bits(&mut self, bits: u8) -> PyResult<()> {
        let mut c = self.inner;
        c.local_id_bits = bits;
        c.validate().map_err(err)?;
        self.inner = c;
        Ok(())
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Config('{}')", self.inner)
    }
}

/// An undirected communication graph.
#[pyclass(name = "Graph", from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: Graph,
}

#[pymethods]
impl PyGraph {
    /// Random k-regular graph with connectivity at least 2f+1.
    #[staticmethod]
    #[pyo3(signature = (n, k, f = 0, seed = 0))]
    fn regular(n: usize, k: usize, f: usize, seed: u64) -> PyResult<Self> {
        let inner = generate_regular_graph(&TopologySpec::new(n, k, f, seed)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn complete(n: usize) -> Self {
        Self {
            inner: Graph::complete(n),
        }
    }

    #[staticmethod]
    fn from_edges(n: usize, edges: Vec<(ProcessId, ProcessId)>) -> PyResult<Self> {
        Ok(Self {
            inner: Graph::from_edges(n, &edges).map_err(err)?,
        })
    }

    /// Parses the `n k` + adjacency lines file format.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Graph::parse_file(text).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn neighbors(&self, p: ProcessId) -> PyResult<Vec<ProcessId>> {
        if p as usize >= self.inner.n() {
            return Err(err(format!("process {p} out of range")));
        }
        Ok(self.inner.neighbors(p).to_vec())
    }

    fn connectivity(&self) -> usize {
        vertex_connectivity(&self.inner)
    }

    fn to_file_string(&self) -> String {
        self.inner.to_file_string()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }
}

type Sends<'py> = Vec<(ProcessId, String, Bound<'py, PyBytes>)>;

fn sends<'py>(py: Python<'py>, actions: Vec<SendAction>) -> Sends<'py> {
    actions
        .into_iter()
        .map(|a| (a.to, a.mtype.to_string(), PyBytes::new(py, &a.frame.bytes)))
        .collect()
}

/// One protocol instance, driven by hand: feed frames in, get frames out.
#[pyclass(name = "Node")]
struct PyNode {
    inner: NodeState,
}

#[pymethods]
impl PyNode {
    #[new]
    fn new(id: ProcessId, neighbors: Vec<ProcessId>, n: usize, f: usize, config: &PyConfig) -> PyResult<Self> {
        Ok(Self {
            inner: NodeState::init(id, &neighbors, n, f, config.inner).map_err(err)?,
        })
    }

    #[getter]
    fn id(&self) -> ProcessId {
        self.inner.id()
    }

    /// Starts a broadcast. Returns `(to, mtype, frame)` tuples.
    fn broadcast<'py>(&mut self, py: Python<'py>, payload: &[u8]) -> PyResult<Sends<'py>> {
        let out = self.inner.brb_broadcast(payload).map_err(err)?;
        Ok(sends(py, out))
    }

    /// Handles one frame from neighbor `sender`.
    fn on_frame<'py>(&mut self, py: Python<'py>, sender: ProcessId, frame: &[u8]) -> Sends<'py> {
        sends(py, self.inner.on_frame(sender, frame))
    }

    /// BRB deliveries since the last call, as `(source, bid, payload)`.
    fn deliveries<'py>(&mut self, py: Python<'py>) -> Vec<(ProcessId, u32, Bound<'py, PyBytes>)> {
        self.inner
            .drain_deliveries()
            .into_iter()
            .map(|d| (d.source, d.bid, PyBytes::new(py, &d.payload)))
            .collect()
    }

    #[getter]
    fn malformed_frames(&self) -> u64 {
        self.inner.stats().malformed_frames
    }

    #[getter]
    fn pending_frames(&self) -> usize {
        self.inner.pending_frames()
    }
}

/// Outcome of one simulated broadcast.
#[pyclass(name = "Report")]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    /// Seconds until every correct process delivered, or None.
    #[getter]
    fn latency(&self) -> Option<f64> {
        self.inner.brb_latency
    }

    #[getter]
    fn total_bits(&self) -> u64 {
        self.inner.total_bits
    }

    #[getter]
    fn events(&self) -> u64 {
        self.inner.events
    }

    #[getter]
    fn frames(&self) -> BTreeMap<&'static str, u64> {
        let f = &self.inner.frames;
        BTreeMap::from([
            ("SEND", f.send),
            ("ECHO", f.echo),
            ("READY", f.ready),
            ("ECHO_ECHO", f.echo_echo),
            ("READY_ECHO", f.ready_echo),
        ])
    }

    #[getter]
    fn delivered(&self) -> Vec<ProcessId> {
        self.inner.deliveries.iter().map(|d| d.node).collect()
    }

    /// Validity, no-duplication, integrity and agreement for the correct processes.
    fn check_properties(&self) -> BTreeMap<&'static str, bool> {
        let c = check(&self.inner);
        BTreeMap::from([
            ("validity", c.validity),
            ("no_duplication", c.no_duplication),
            ("integrity", c.integrity),
            ("agreement", c.agreement),
        ])
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// Simulates one broadcast from process 0 to quiescence. `adversaries` maps
/// process IDs to strategy names.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (graph, f, config, payload_size = 16, seed = 0, asynchronous = false, adversaries = None))]
fn simulate(
    py: Python<'_>,
    graph: &PyGraph,
    f: usize,
    config: &PyConfig,
    payload_size: usize,
    seed: u64,
    asynchronous: bool,
    adversaries: Option<BTreeMap<ProcessId, String>>,
) -> PyResult<PyReport> {
    let mut plan = AdversaryPlan::none();
    for (p, s) in adversaries.unwrap_or_default() {
        let s: Strategy = s.parse().map_err(err)?;
        plan = plan.with(p, s);
    }
    let g = graph.inner.clone();
    let cfg = config.inner;
    let r = py.detach(move || {
        let mut spec = RunSpec::new(&g, f, cfg);
        spec.plan = plan;
        spec.payload_size = payload_size;
        spec.seed = seed;
        if asynchronous {
            spec.link = LinkModel::asynchronous();
        }
        run_spec(&spec, None)
    });
    Ok(PyReport { inner: r.map_err(err)? })
}

/// Runs a TOML experiment config and returns the CSV text.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::parse(config_toml).map_err(err)?;
    let out = py.detach(move || run_sweep(&cfg)).map_err(err)?;
    Ok(out.to_csv_string())
}

#[pyfunction]
fn echo_quorum(n: usize, f: usize) -> PyResult<usize> {
    bracha::echo_quorum(n, f).map_err(err)
}

/// `(echo generators, ready generators)` under `config`.
#[pyfunction]
fn roles(n: usize, f: usize, config: &PyConfig) -> PyResult<(Vec<ProcessId>, Vec<ProcessId>)> {
    let r = bracha::roles(n, f, &config.inner).map_err(err)?;
    Ok((r.echo_generators.iter().collect(), r.ready_generators.iter().collect()))
}

#[pymodule]
fn brb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyNode>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(echo_quorum, m)?)?;
    m.add_function(wrap_pyfunction!(roles, m)?)?;
    m.add("STRATEGIES", Strategy::ALL.iter().map(|s| s.name()).collect::<Vec<_>>())?;
    Ok(())
}
