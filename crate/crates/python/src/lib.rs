//! Python bindings: configs, simulation runs, the power kernels, single-slot
//! scheduling and the capacity-region probe.
//!
//! Structured results cross the boundary as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use dlsched::kernels::{self, PowerPolicyInput, RtLink};
use dlsched::region::{self, RegionQuery};
use dlsched::sched::EligibleSlotView;
use dlsched::{RunReport, SchedulerKind, SystemConfig};

fn err(e: dlsched::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(json_err)?)
}

/// Simulation config. Build it with `Config.parse(text)` from JSON or
/// `key = value` text.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SystemConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (n_rt, n_nrt, p_avg))]
    fn new(n_rt: usize, n_nrt: usize, p_avg: f64) -> Self {
        Self {
            inner: SystemConfig::new(n_rt, n_nrt, p_avg),
        }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: text.parse().map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SystemConfig::load(path.as_ref()).map_err(err)?,
        })
    }

    /// Returns a validated copy with `key = value` lines applied on top.
    fn with_overrides(&self, text: &str) -> PyResult<Self> {
        let mut base = serde_json::to_value(&self.inner).map_err(json_err)?;
        let doc = dlsched::config::parse_document(text).map_err(err)?;
        merge(&mut base, doc.value);
        let inner: SystemConfig = serde_json::from_value(base).map_err(json_err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    fn to_key_value(&self) -> PyResult<String> {
        self.inner.to_key_value().map_err(err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner)
    }

    #[getter]
    fn scheduler(&self) -> &'static str {
        self.inner.scheduler.name()
    }

    #[getter]
    fn horizon(&self) -> u64 {
        self.inner.horizon
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Runs the simulation; the GIL is released meanwhile.
    fn run(&self, py: Python<'_>) -> PyResult<PyReport> {
        let cfg = self.inner.clone();
        let inner = py.detach(move || dlsched::run(&cfg)).map_err(err)?;
        Ok(PyReport { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n_rt={}, n_nrt={}, p_avg={}, scheduler={})",
            self.inner.n_rt,
            self.inner.n_nrt,
            self.inner.p_avg,
            self.inner.scheduler.name()
        )
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Summary of one run.
#[pyclass(name = "Report")]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn sum_throughput(&self) -> f64 {
        self.inner.sum_throughput
    }

    #[getter]
    fn avg_power(&self) -> f64 {
        self.inner.avg_power
    }

    #[getter]
    fn min_delivery_ratio(&self) -> f64 {
        self.inner.min_delivery_ratio
    }

    #[getter]
    fn delivery_ratio(&self) -> Vec<f64> {
        self.inner.delivery_ratio.clone()
    }

    #[getter]
    fn mean_sets_evaluated(&self) -> f64 {
        self.inner.mean_sets_evaluated
    }

    fn constraints_ok(&self) -> bool {
        self.inner.constraints_ok()
    }

    fn invariant_violations(&self) -> u64 {
        self.inner.invariant_violations()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    /// Sampled metrics as CSV text.
    fn metrics_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_metrics_csv(&mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(scheduler={}, sum_throughput={:.4}, avg_power={:.4}, min_delivery_ratio={:.4})",
            self.inner.scheduler.name(),
            self.inner.sum_throughput,
            self.inner.avg_power,
            self.inner.min_delivery_ratio
        )
    }
}

#[pyfunction]
fn lambert_w0(z: f64) -> PyResult<f64> {
    kernels::lambert_w0(z).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (queue, power_price, gain, p_max, slot_len = 1.0))]
fn waterfilling_power(queue: f64, power_price: f64, gain: f64, p_max: f64, slot_len: f64) -> PyResult<f64> {
    let input = PowerPolicyInput {
        queue_weight: queue,
        power_price,
        gain,
        p_max,
        slot_len,
        packet_bits: 1.0,
    };
    input.validate().map_err(err)?;
    Ok(kernels::waterfilling_power(&input))
}

#[pyfunction]
fn lambert_rt_power(phi_tilde: f64, gain: f64, p_max: f64) -> f64 {
    kernels::lambert_rt_power(phi_tilde, gain, p_max)
}

/// Slot-budget multiplier and Lambert allocation for one RT set.
#[pyfunction]
#[pyo3(signature = (gains, packet_bits, power_price, psi_nr_star, slot_len = 1.0, p_max = 20.0))]
fn solve_phi<'py>(
    py: Python<'py>,
    gains: Vec<f64>,
    packet_bits: Vec<f64>,
    power_price: f64,
    psi_nr_star: f64,
    slot_len: f64,
    p_max: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if gains.len() != packet_bits.len() {
        return Err(PyValueError::new_err("gains and packet_bits differ in length"));
    }
    let links: Vec<RtLink> = gains
        .iter()
        .zip(&packet_bits)
        .map(|(&gain, &packet_bits)| RtLink { gain, packet_bits })
        .collect();
    let s = kernels::solve_phi(&links, power_price, psi_nr_star, slot_len, p_max).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("phi", s.phi)?;
    d.set_item("powers", s.powers)?;
    d.set_item("durations", s.durations)?;
    d.set_item("rates", s.rates)?;
    d.set_item("residual", s.residual)?;
    Ok(d)
}

/// Runs one scheduler on a single slot. `view` is the JSON form of an
/// eligible-slot view; the decision comes back as a dict.
#[pyfunction]
#[pyo3(signature = (scheduler, view, seed = 0, coin_bias = 0.5))]
fn schedule<'py>(
    py: Python<'py>,
    scheduler: &str,
    view: &str,
    seed: u64,
    coin_bias: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: SchedulerKind = scheduler.parse().map_err(err)?;
    let view: EligibleSlotView = serde_json::from_str(view).map_err(json_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = kind.decide(&view, &mut rng, coin_bias).map_err(err)?;
    serialize(py, &d)
}

/// Capacity-region membership. `query` is JSON; returns a dict with
/// `inside`, `max_scaling` and `certificate` (or None).
#[pyfunction]
fn in_lambert_region<'py>(py: Python<'py>, query: &str) -> PyResult<Bound<'py, PyAny>> {
    let q: RegionQuery = serde_json::from_str(query).map_err(json_err)?;
    let v = py.detach(|| region::in_lambert_region(&q)).map_err(err)?;
    serialize(py, &v)
}

/// Largest factor by which the query's NRT rates can be scaled.
#[pyfunction]
fn max_scaling(py: Python<'_>, query: &str) -> PyResult<Option<f64>> {
    let q: RegionQuery = serde_json::from_str(query).map_err(json_err)?;
    py.detach(|| region::max_scaling(&q)).map_err(err)
}

#[pyfunction]
fn schedulers() -> Vec<&'static str> {
    [
        SchedulerKind::Onoff,
        SchedulerKind::LambertStrict,
        SchedulerKind::Exhaustive,
        SchedulerKind::Fixedp,
        SchedulerKind::HeteroHeuristic,
    ]
    .iter()
    .map(|k| k.name())
    .collect()
}

#[pymodule]
fn dlsched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(lambert_w0, m)?)?;
    m.add_function(wrap_pyfunction!(waterfilling_power, m)?)?;
    m.add_function(wrap_pyfunction!(lambert_rt_power, m)?)?;
    m.add_function(wrap_pyfunction!(solve_phi, m)?)?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(in_lambert_region, m)?)?;
    m.add_function(wrap_pyfunction!(max_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(schedulers, m)?)?;
    Ok(())
}
