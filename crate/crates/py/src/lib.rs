//! Python bindings. Results with nested structure are returned as plain
//! Python dicts and lists decoded from their JSON form.

use geodid_core::did::{event_study as core_event_study, Adjustment, CovariateSpec, EstimationConfig};
use geodid_core::export::{read_field_csv, write_field_csv, ClusterReport};
use geodid_core::fda::{self, BasisConfig, ClusterConfig};
use geodid_core::kernel;
use geodid_core::local::{self, KernelRequest, LocalATTField, LocalConfig};
use geodid_core::panel::{
    assign_cohorts, ingest_csv, write_panel_csv, ColumnSchema, Panel as CorePanel, ReversalPolicy,
};
use geodid_core::synth::{self, EffectProfile, SimConfig, TrajectoryFamilies};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Balanced or unbalanced long-format panel.
#[pyclass(module = "geodid", frozen)]
struct Panel {
    inner: CorePanel,
}

#[pymethods]
impl Panel {
    /// Reads a long-format CSV; `columns` optionally renames the expected headers.
    #[staticmethod]
    #[pyo3(signature = (path, columns=None))]
    fn from_csv(path: &str, columns: Option<&str>) -> PyResult<Self> {
        let schema: ColumnSchema = match columns {
            Some(json) => serde_json::from_str(json).map_err(value_err)?,
            None => ColumnSchema::default(),
        };
        Ok(Self { inner: ingest_csv(path, &schema).map_err(value_err)?.panel })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(value_err)?;
        write_panel_csv(&self.inner, file).map_err(value_err)
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    #[getter]
    fn n_periods(&self) -> usize {
        self.inner.n_periods()
    }

    #[getter]
    fn periods(&self) -> (i64, i64) {
        (self.inner.first_period(), self.inner.last_period())
    }

    fn unit_ids(&self) -> Vec<String> {
        self.inner.units().iter().map(|u| u.unit_id.clone()).collect()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(n_units={}, periods={}..{})",
            self.inner.n_units(),
            self.inner.first_period(),
            self.inner.last_period()
        )
    }
}

/// Per-unit local event studies.
#[pyclass(module = "geodid", frozen)]
struct LocalField {
    inner: LocalATTField,
}

#[pymethods]
impl LocalField {
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(value_err)?;
        Ok(Self { inner: read_field_csv(file).map_err(value_err)? })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(value_err)?;
        write_field_csv(&self.inner, file).map_err(value_err)
    }

    fn unit_ids(&self) -> Vec<String> {
        self.inner.entries.iter().map(|e| e.unit_id.clone()).collect()
    }

    /// Post-treatment average per unit; `None` for skipped units.
    fn post_avg(&self) -> Vec<Option<f64>> {
        self.inner.entries.iter().map(|e| e.post_avg).collect()
    }

    fn statuses(&self) -> Vec<String> {
        self.inner.entries.iter().map(|e| e.status.label()).collect()
    }

    #[getter]
    fn event_times(&self) -> Vec<i64> {
        self.inner.event_times.clone()
    }

    #[getter]
    fn n_ok(&self) -> usize {
        self.inner.n_ok()
    }

    fn __len__(&self) -> usize {
        self.inner.entries.len()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }
}

fn parse_policy(policy: &str) -> PyResult<ReversalPolicy> {
    policy.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn estimation(
    covariates: &str,
    adjustment: Option<&str>,
    bootstrap_reps: usize,
    seed: Option<u64>,
) -> PyResult<EstimationConfig> {
    let spec = CovariateSpec::from_label(covariates)
        .ok_or_else(|| PyValueError::new_err(format!("unknown covariate ladder row `{covariates}`")))?;
    let adjustment = match adjustment {
        Some(a) => a.parse::<Adjustment>().map_err(PyValueError::new_err)?,
        None if spec.is_empty() => Adjustment::None,
        None => Adjustment::OutcomeRegression,
    };
    if bootstrap_reps > 0 && seed.is_none() {
        return Err(PyValueError::new_err("bootstrap inference needs an explicit seed"));
    }
    Ok(EstimationConfig {
        covariate_spec: spec,
        adjustment,
        bootstrap_reps,
        seed: seed.unwrap_or(0),
        ..EstimationConfig::default()
    })
}

/// Synthetic panel and its ground truth. `preset` is one of `default`,
/// `two-region`, `dynamic`; `config` is a JSON simulation config that
/// replaces the preset.
#[pyfunction]
#[pyo3(signature = (seed, preset="default", n_units=None, config=None))]
fn simulate(
    py: Python<'_>,
    seed: u64,
    preset: &str,
    n_units: Option<usize>,
    config: Option<&str>,
) -> PyResult<(Panel, Py<PyAny>)> {
    let mut sim = match (config, preset) {
        (Some(json), _) => serde_json::from_str(json).map_err(value_err)?,
        (None, "default") => SimConfig::default(),
        (None, "two-region") => SimConfig::two_region(1000, 0.03, 0.10, seed),
        (None, "dynamic") => {
            SimConfig { default_effect: EffectProfile::Linear { intercept: 0.02, slope: 0.02 }, ..SimConfig::default() }
        }
        (None, other) => return Err(PyValueError::new_err(format!("unknown preset `{other}`"))),
    };
    sim.seed = seed;
    if let Some(n) = n_units {
        sim.n_units = n;
    }
    let (panel, truth) = py.detach(|| synth::simulate_panel(&sim)).map_err(value_err)?;
    Ok((Panel { inner: panel }, to_py(py, &truth)?))
}

/// Three planted trajectory families as a local field, with planted labels.
#[pyfunction]
#[pyo3(signature = (seed, units_per_family=60, noise_sd=0.004))]
fn trajectory_families(seed: u64, units_per_family: usize, noise_sd: f64) -> (LocalField, Vec<usize>) {
    let (field, labels) =
        TrajectoryFamilies { units_per_family, noise_sd, seed, ..TrajectoryFamilies::default() }.generate();
    (LocalField { inner: field }, labels)
}

/// Global event study as a dict.
#[pyfunction]
#[pyo3(signature = (panel, covariates="baseline", adjustment=None, bootstrap_reps=999, seed=None, reversal_policy="drop"))]
fn event_study(
    py: Python<'_>,
    panel: &Panel,
    covariates: &str,
    adjustment: Option<&str>,
    bootstrap_reps: usize,
    seed: Option<u64>,
    reversal_policy: &str,
) -> PyResult<Py<PyAny>> {
    let est = estimation(covariates, adjustment, bootstrap_reps, seed)?;
    let cohorts = assign_cohorts(&panel.inner, parse_policy(reversal_policy)?);
    let study = py.detach(|| core_event_study(&panel.inner, &cohorts, &est)).map_err(runtime_err)?;
    to_py(py, &study)
}

/// Local event study at every unit. `bandwidth` is `"auto"` or km and only
/// applies to the gaussian kernel. Returns the field and the selected
/// bandwidth when one was chosen by cross-validation.
#[pyfunction]
#[pyo3(signature = (panel, kernel="linear", bandwidth=None, d_max=None, min_mass=5.0, jobs=None, covariates="baseline", reversal_policy="drop"))]
#[allow(clippy::too_many_arguments)]
fn local_field(
    py: Python<'_>,
    panel: &Panel,
    kernel: &str,
    bandwidth: Option<Bound<'_, PyAny>>,
    d_max: Option<f64>,
    min_mass: f64,
    jobs: Option<usize>,
    covariates: &str,
    reversal_policy: &str,
) -> PyResult<(LocalField, Option<f64>)> {
    let request = match kernel {
        "linear" => KernelRequest::Linear { d_max },
        "gaussian" => match bandwidth {
            None => KernelRequest::Gaussian { h: None, grid: None },
            Some(b) if b.extract::<String>().is_ok_and(|s| s == "auto") => {
                KernelRequest::Gaussian { h: None, grid: None }
            }
            Some(b) => KernelRequest::Gaussian { h: Some(b.extract::<f64>()?), grid: None },
        },
        other => return Err(PyValueError::new_err(format!("unknown kernel `{other}`"))),
    };
    let est = estimation(covariates, None, 0, None)?;
    let cohorts = assign_cohorts(&panel.inner, parse_policy(reversal_policy)?);
    let (field, h) = py
        .detach(|| -> Result<_, local::LocalError> {
            let (spec, sel) = local::resolve_kernel(&panel.inner, &request, &est.covariate_spec)?;
            let cfg = LocalConfig { min_mass, ..LocalConfig::new(spec) };
            Ok((local::local_estimate_all(&panel.inner, &cohorts, &cfg, &est, jobs)?, sel.map(|s| s.h)))
        })
        .map_err(value_err)?;
    Ok((LocalField { inner: field }, h))
}

/// Smooths and clusters the trajectories of a local field. With `select_k`
/// (a list of K values) the BIC-best K is fitted unless `k` is given.
#[pyfunction]
#[pyo3(signature = (field, seed, k=None, select_k=None, restarts=10, n_basis=None))]
fn cluster(
    py: Python<'_>,
    field: &LocalField,
    seed: u64,
    k: Option<usize>,
    select_k: Option<Vec<usize>>,
    restarts: usize,
    n_basis: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| -> Result<ClusterReport, fda::FdaError> {
            let curves = fda::smooth_curves(&field.inner, BasisConfig { n_basis, order: None })?;
            let mut cfg = ClusterConfig { k: k.unwrap_or(3), seed, restarts, ..ClusterConfig::default() };
            match select_k {
                Some(range) => {
                    let sel = fda::select_k(&curves, &range, &cfg)?;
                    let model = match k {
                        Some(k) if k != sel.k => {
                            cfg.k = k;
                            fda::funfem_cluster(&curves, &cfg)?
                        }
                        _ => sel.model,
                    };
                    Ok(ClusterReport::new(&curves, model, Some(sel.table)))
                }
                None => Ok(ClusterReport::new(&curves, fda::funfem_cluster(&curves, &cfg)?, None)),
            }
        })
        .map_err(value_err)?;
    let out = to_py(py, &report)?;
    let ids: Vec<String> = report.model.unit_ids.clone();
    out.bind(py).set_item("unit_ids", ids)?;
    Ok(out)
}

/// Pearson correlation of post-treatment averages over units ok in both fields.
#[pyfunction]
fn robustness(py: Python<'_>, a: &LocalField, b: &LocalField) -> PyResult<Py<PyAny>> {
    let report = local::robustness_correlation(&a.inner, &b.inner).map_err(value_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn linear_kernel(distances: Vec<f64>, d_max: f64) -> PyResult<Vec<f64>> {
    kernel::linear_kernel(&distances, d_max).map_err(value_err)
}

#[pyfunction]
fn gaussian_kernel(distances: Vec<f64>, h: f64) -> PyResult<Vec<f64>> {
    kernel::gaussian_kernel(&distances, h).map_err(value_err)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("label vectors differ in length"));
    }
    Ok(fda::adjusted_rand_index(&a, &b))
}

#[pymodule]
fn geodid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Panel>()?;
    m.add_class::<LocalField>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_families, m)?)?;
    m.add_function(wrap_pyfunction!(event_study, m)?)?;
    m.add_function(wrap_pyfunction!(local_field, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(robustness, m)?)?;
    m.add_function(wrap_pyfunction!(linear_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    Ok(())
}
