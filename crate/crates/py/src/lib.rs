//! Python bindings: packages, circuits, simulation and the dense oracle.

use std::time::Duration;

use ::fiberdd as dd;
use num_complex::Complex64;
use pyo3::exceptions::{PyMemoryError, PyTimeoutError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: dd::DdError) -> PyErr {
    match e {
        dd::DdError::OutOfMemory { .. } => PyMemoryError::new_err(e.to_string()),
        dd::DdError::Timeout => PyTimeoutError::new_err("timeout"),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Root edge of a decision diagram. Only meaningful with its package.
#[pyclass(frozen, eq, hash, from_py_object, module = "fiberdd")]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Edge {
    inner: dd::Edge,
}

#[pymethods]
impl Edge {
    fn __repr__(&self) -> String {
        format!("Edge(node={}, weight={})", self.inner.node.index(), self.inner.weight.index())
    }

    #[getter]
    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

/// Node store with unique tables and complex table.
#[pyclass(frozen, module = "fiberdd")]
struct Package {
    inner: dd::Package,
}

#[pymethods]
impl Package {
    #[new]
    #[pyo3(signature = (max_nodes=None))]
    fn new(max_nodes: Option<u64>) -> Self {
        let mut cfg = dd::PackageConfig::default();
        if let Some(m) = max_nodes {
            cfg.node_limit = m;
        }
        Package {
            inner: dd::Package::with_config(cfg),
        }
    }

    /// Basis state `bits` on `n` qubits; qubit q is bit q.
    fn basis(&self, n: usize, bits: u64) -> PyResult<Edge> {
        Ok(Edge {
            inner: self.inner.vector_dd_from_basis(n, bits).map_err(to_py)?,
        })
    }

    fn amplitude(&self, state: Edge, n: usize, bits: u64) -> PyResult<Complex64> {
        self.inner.amplitude(state.inner, n, bits).map_err(to_py)
    }

    /// Dense state vector, index = basis state.
    fn statevector(&self, state: Edge, n: usize) -> PyResult<Vec<Complex64>> {
        Ok(self.inner.reconstruct(state.inner, n, dd::Kind::Vector).map_err(to_py)?.data)
    }

    fn norm2(&self, e: Edge) -> f64 {
        self.inner.norm2(e.inner)
    }

    /// Nodes reachable from `e`.
    fn size(&self, e: Edge) -> usize {
        self.inner.size(e.inner)
    }

    fn node_count(&self) -> u64 {
        self.inner.node_count()
    }

    fn __repr__(&self) -> String {
        format!("Package(nodes={})", self.inner.node_count())
    }
}

/// Gate list on `n` qubits.
#[pyclass(frozen, module = "fiberdd")]
struct Circuit {
    inner: dd::Circuit,
}

#[pymethods]
impl Circuit {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        dd::parse_circuit(text)
            .map(|inner| Circuit { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn grover(n: usize, marked: u64) -> PyResult<Self> {
        let inner = dd::build_grover(n, dd::OracleSpec { marked }).map_err(to_py)?;
        Ok(Circuit { inner })
    }

    #[staticmethod]
    fn random(n: usize, depth: usize, seed: u64) -> PyResult<Self> {
        Ok(Circuit {
            inner: dd::random_circuit(n, depth, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn qubits(&self) -> usize {
        self.inner.n
    }

    fn __len__(&self) -> usize {
        self.inner.gates.len()
    }

    fn to_text(&self) -> String {
        dd::serialize_circuit(&self.inner)
    }

    /// Dense reference simulation from basis state `input`.
    #[pyo3(signature = (input=0))]
    fn dense(&self, input: u64) -> PyResult<Vec<Complex64>> {
        Ok(dd::refsim::dense_run(&self.inner, input).map_err(to_py)?.amps)
    }
}

fn cache_scope(name: &str) -> PyResult<dd::CacheScope> {
    match name.to_ascii_lowercase().as_str() {
        "none" => Ok(dd::CacheScope::None),
        "local" => Ok(dd::CacheScope::Local),
        "global" => Ok(dd::CacheScope::Global),
        _ => Err(PyValueError::new_err(format!("unknown cache scope {name}"))),
    }
}

/// Applies `circuit` to `input` (default |0…0⟩). Returns the output edge and a
/// dict of run metrics.
#[pyfunction]
#[pyo3(signature = (package, circuit, input=None, strategy="sequential", workers=1, cache="global", spawn_threshold=None, timeout=None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    package: &Package,
    circuit: &Circuit,
    input: Option<Edge>,
    strategy: &str,
    workers: usize,
    cache: &str,
    spawn_threshold: Option<usize>,
    timeout: Option<f64>,
) -> PyResult<(Edge, Bound<'py, PyDict>)> {
    let strategy =
        dd::Strategy::from_name(strategy).ok_or_else(|| PyValueError::new_err(format!("unknown strategy {strategy}")))?;
    let mut cfg = dd::EngineConfig::new(strategy, workers).with_cache(cache_scope(cache)?);
    cfg.spawn_threshold = spawn_threshold;
    if let Some(t) = timeout {
        if !(t.is_finite() && t > 0.0) {
            return Err(PyValueError::new_err("timeout must be positive"));
        }
        cfg.timeout = Some(Duration::from_secs_f64(t));
    }
    let pkg = &package.inner;
    let c = &circuit.inner;
    let input = match input {
        Some(e) => e.inner,
        None => pkg.vector_dd_from_basis(c.n, 0).map_err(to_py)?,
    };
    let (out, m) = py.detach(|| dd::simulate(pkg, c, input, &cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("wall_s", m.wall_time.as_secs_f64())?;
    d.set_item("mul_hit", m.mul_hit_ratio())?;
    d.set_item("add_hit", m.add_hit_ratio())?;
    d.set_item("idle_frac", m.mean_idle())?;
    d.set_item("peak_nodes", m.peak_nodes)?;
    d.set_item("final_nodes", m.final_nodes)?;
    d.set_item("spawned_tasks", m.spawned_tasks)?;
    Ok((Edge { inner: out }, d))
}

#[pyfunction]
fn strategies() -> Vec<&'static str> {
    dd::Strategy::ALL.iter().map(|s| s.name()).collect()
}

#[pymodule]
fn fiberdd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Edge>()?;
    m.add_class::<Package>()?;
    m.add_class::<Circuit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(strategies, m)?)?;
    Ok(())
}
