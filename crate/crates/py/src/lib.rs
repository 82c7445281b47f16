//! Python bindings: estimands, data sets, cross-fitted estimators, the
//! Gateaux-derivative oracle and the simulation harness.
//!
//! Structured results (diagnostics, simulation metrics, oracle summaries)
//! cross the boundary as plain dicts built from their JSON form.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use influence_lab::cli::{default_spec, parse_spec_arg, worst_per_trial};
use influence_lab::distributions::{load_csv, Column, ColumnRole, Dataset as CoreDataset, Kind, Role, Schema};
use influence_lab::estimands::{nuisance_requirements, EstimandSpec, NuisanceSlot};
use influence_lab::estimation::{fit_and_estimate, EstimateReport as CoreReport, Learner, LearnerConfig, Method};
use influence_lab::gateaux::{eif_sweep, t1_sweep};
use influence_lab::learners::{Bandwidth, FeatureMap};
use influence_lab::seed::derive_seed;
use influence_lab::simulation::{run_replications_multi, Dgp, RunPlan};
use influence_lab::Error;

create_exception!(influence_lab, InfluenceLabError, PyException, "Base class of all toolkit errors.");
create_exception!(influence_lab, ValidationError, InfluenceLabError, "Bad input or configuration.");
create_exception!(
    influence_lab,
    NotPathwiseDifferentiableError,
    ValidationError,
    "The requested estimand has no finite-variance influence function."
);
create_exception!(influence_lab, NumericalError, InfluenceLabError, "Fitting or solving failed.");
create_exception!(influence_lab, VerificationError, InfluenceLabError, "An oracle check failed.");

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::NotPathwiseDifferentiable { .. } => NotPathwiseDifferentiableError::new_err(msg),
        _ => match e.exit_code() {
            1 => ValidationError::new_err(msg),
            2 => NumericalError::new_err(msg),
            _ => VerificationError::new_err(msg),
        },
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| InfluenceLabError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A target functional, e.g. `Estimand("quantile(tau=0.5)")`.
#[pyclass(frozen, eq, skip_from_py_object, module = "influence_lab")]
#[derive(Clone, PartialEq)]
struct Estimand {
    spec: EstimandSpec,
}

#[pymethods]
impl Estimand {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Estimand {
            spec: parse_spec_arg(spec).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.spec.name()
    }

    /// Nuisance slots a data estimate of this estimand needs.
    fn nuisances(&self) -> PyResult<Vec<&'static str>> {
        Ok(nuisance_requirements(&self.spec)
            .map_err(py_err)?
            .into_iter()
            .map(|s| s.name())
            .collect())
    }

    /// Whether the finite-support oracle can check this estimand.
    #[getter]
    fn has_discrete_oracle(&self) -> bool {
        self.spec.has_discrete_oracle()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.spec)
    }

    fn __repr__(&self) -> String {
        format!("Estimand('{}')", self.spec)
    }

    fn __str__(&self) -> String {
        self.spec.to_string()
    }
}

fn parse_role(column: &str, text: &str) -> PyResult<(Role, Kind)> {
    let mut words = text.split_whitespace();
    let role = words.next().and_then(Role::parse);
    let kind = words.next().map_or(Some(Kind::Continuous), Kind::parse);
    match (role, kind, words.next()) {
        (Some(r), Some(k), None) => Ok((r, k)),
        _ => Err(ValidationError::new_err(format!(
            "role of `{column}` must be `<role> [<kind>]`, got `{text}`"
        ))),
    }
}

/// Observed data with declared roles.
///
/// `roles` maps column names to `"<role> <kind>"`, e.g.
/// `{"y": "outcome continuous", "x": "exposure binary", "z": "covariate"}`;
/// the kind defaults to continuous. Column order follows `roles`.
#[pyclass(frozen, skip_from_py_object, module = "influence_lab")]
#[derive(Clone)]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(columns: BTreeMap<String, Vec<f64>>, roles: &Bound<'_, PyDict>) -> PyResult<Self> {
        let mut schema_cols = Vec::new();
        let mut data = Vec::new();
        for (name, role) in roles.iter() {
            let name: String = name.extract()?;
            let (role, kind) = parse_role(&name, &role.extract::<String>()?)?;
            let values = columns
                .get(&name)
                .ok_or_else(|| ValidationError::new_err(format!("no data for column `{name}`")))?;
            schema_cols.push(Column::new(name.clone(), role, kind));
            data.push(values);
        }
        let n = data.first().map_or(0, |c| c.len());
        if data.iter().any(|c| c.len() != n) {
            return Err(ValidationError::new_err("columns differ in length"));
        }
        let schema = Arc::new(Schema::new(schema_cols).map_err(py_err)?);
        let rows = (0..n).map(|i| data.iter().map(|c| c[i]).collect()).collect();
        Ok(Dataset {
            inner: CoreDataset::from_values(schema, rows).map_err(py_err)?,
        })
    }

    /// Reads a CSV file with a header row.
    #[staticmethod]
    fn from_csv(path: &str, roles: &Bound<'_, PyDict>) -> PyResult<Self> {
        let mut spec = Vec::new();
        for (name, role) in roles.iter() {
            let column: String = name.extract()?;
            let (role, kind) = parse_role(&column, &role.extract::<String>()?)?;
            spec.push(ColumnRole { column, role, kind });
        }
        Ok(Dataset {
            inner: load_csv(path, &spec).map_err(py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.schema().columns().iter().map(|c| c.name.clone()).collect()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let idx = self
            .inner
            .schema()
            .index_of(name)
            .ok_or_else(|| ValidationError::new_err(format!("no column `{name}`")))?;
        Ok(self.inner.column(idx))
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, columns={:?})", self.inner.n(), self.columns())
    }
}

/// Point estimate, influence-function standard error and Wald interval.
#[pyclass(frozen, module = "influence_lab")]
struct EstimateReport {
    inner: CoreReport,
}

#[pymethods]
impl EstimateReport {
    #[getter]
    fn psi_hat(&self) -> f64 {
        self.inner.psi_hat
    }

    #[getter]
    fn se(&self) -> f64 {
        self.inner.se
    }

    #[getter]
    fn ci(&self) -> (f64, f64) {
        self.inner.ci
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.name()
    }

    #[getter]
    fn estimand(&self) -> Estimand {
        Estimand {
            spec: self.inner.spec.clone(),
        }
    }

    #[getter]
    fn eif_values(&self) -> Vec<f64> {
        self.inner.eif_values.clone()
    }

    #[getter]
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.diagnostics)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| InfluenceLabError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let (lo, hi) = self.inner.ci;
        format!(
            "EstimateReport({} {}: {:.6} (se {:.6}, {:.0}% CI [{:.6}, {:.6}]))",
            self.inner.method.name(),
            self.inner.spec,
            self.inner.psi_hat,
            self.inner.se,
            100.0 * (1.0 - self.inner.alpha),
            lo,
            hi
        )
    }
}

fn parse_method(method: &str) -> PyResult<Method> {
    Method::parse(method).ok_or_else(|| {
        ValidationError::new_err(format!("unknown method `{method}`; expected plugin, one-step, ee or tmle"))
    })
}

/// A learner given as a name or as a dict with `learner` plus any of
/// `degree`, `interactions`, `ridge_lambda`, `bandwidth`.
fn parse_learner(slot: NuisanceSlot, value: &Bound<'_, PyAny>) -> PyResult<Learner> {
    let (name, opts) = match value.extract::<String>() {
        Ok(name) => (name, None),
        Err(_) => {
            let d = value.cast::<PyDict>()?;
            let name: String = d
                .get_item("learner")?
                .ok_or_else(|| ValidationError::new_err(format!("learner for `{slot}` needs a `learner` key")))?
                .extract()?;
            (name, Some(d.clone()))
        }
    };
    let mut learner = Learner::from_name(&name)
        .ok_or_else(|| ValidationError::new_err(format!("unknown learner `{name}` for `{slot}`")))?;
    if !learner.fits(slot) {
        return Err(ValidationError::new_err(format!("learner `{name}` cannot fit `{slot}`")));
    }
    let Some(opts) = opts else { return Ok(learner) };
    for key in opts.keys() {
        let key: String = key.extract()?;
        if !["learner", "degree", "interactions", "ridge_lambda", "bandwidth"].contains(&key.as_str()) {
            return Err(ValidationError::new_err(format!("unknown learner option `{key}` for `{slot}`")));
        }
    }
    match &mut learner {
        Learner::Ols {
            ridge_lambda,
            feature_map,
        }
        | Learner::Logistic {
            ridge_lambda,
            feature_map,
        } => {
            if let Some(l) = opts.get_item("ridge_lambda")? {
                *ridge_lambda = l.extract()?;
            }
            let degree: u8 = opts.get_item("degree")?.map_or(Ok(1), |v| v.extract())?;
            let interactions: bool = opts.get_item("interactions")?.map_or(Ok(false), |v| v.extract())?;
            *feature_map = FeatureMap::new(degree, interactions).map_err(py_err)?;
        }
        Learner::Kernel { bandwidth } | Learner::Kde { bandwidth } => {
            if let Some(b) = opts.get_item("bandwidth")? {
                *bandwidth = match b.extract::<f64>() {
                    Ok(h) => Bandwidth::Fixed(h),
                    Err(_) if b.extract::<String>().is_ok_and(|s| s == "auto") => Bandwidth::Auto,
                    Err(_) => return Err(ValidationError::new_err("bandwidth must be a number or \"auto\"")),
                };
            }
        }
    }
    Ok(learner)
}

fn learner_config(spec: &EstimandSpec, learners: Option<&Bound<'_, PyDict>>, trim: f64) -> PyResult<LearnerConfig> {
    let mut config = LearnerConfig::defaults(spec).map_err(py_err)?;
    config.trim = trim;
    if let Some(d) = learners {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let slot = NuisanceSlot::parse(&key)
                .ok_or_else(|| ValidationError::new_err(format!("unknown nuisance slot `{key}`")))?;
            config = config.with(slot, parse_learner(slot, &v)?);
        }
    }
    config.validate(spec).map_err(py_err)?;
    Ok(config)
}

fn as_spec(estimand: &Bound<'_, PyAny>) -> PyResult<EstimandSpec> {
    if let Ok(e) = estimand.cast::<Estimand>() {
        return Ok(e.get().spec.clone());
    }
    parse_spec_arg(&estimand.extract::<String>()?).map_err(py_err)
}

/// Cross-fitted estimate of `estimand` on `data`.
///
/// `learners` maps nuisance slots to learners; unlisted slots use logistic
/// regression for probabilities, a KDE for densities and OLS otherwise.
#[pyfunction]
#[pyo3(signature = (data, estimand, method = "one-step", learners = None, folds = 5, seed = 0, alpha = 0.05, trim = 0.01))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    data: &Dataset,
    estimand: &Bound<'_, PyAny>,
    method: &str,
    learners: Option<&Bound<'_, PyDict>>,
    folds: usize,
    seed: u64,
    alpha: f64,
    trim: f64,
) -> PyResult<EstimateReport> {
    let spec = as_spec(estimand)?;
    let method = parse_method(method)?;
    let config = learner_config(&spec, learners, trim)?;
    let data = data.inner.clone();
    let inner = py
        .detach(|| fit_and_estimate(method, &spec, &data, &config, folds, derive_seed(seed, 0), alpha))
        .map_err(py_err)?;
    Ok(EstimateReport { inner })
}

/// Numerical Gateaux derivatives against the analytic influence functions
/// over random finite-support laws. Returns a summary dict; raises
/// `VerificationError` if `raise_on_failure` and any check misses
/// `tolerance`.
#[pyfunction]
#[pyo3(signature = (spec = "all", trials = 50, max_support = 20, seed = 0, tolerance = 1e-6, at_one = false, raise_on_failure = true))]
fn verify_eif<'py>(
    py: Python<'py>,
    spec: &str,
    trials: usize,
    max_support: usize,
    seed: u64,
    tolerance: f64,
    at_one: bool,
    raise_on_failure: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let specs = if spec == "all" {
        EstimandSpec::discrete_catalog()
    } else {
        vec![parse_spec_arg(spec).map_err(py_err)?]
    };
    let reports = py
        .detach(|| {
            if at_one {
                t1_sweep(&specs, trials, max_support, seed)
            } else {
                eif_sweep(&specs, trials, max_support, seed)
            }
        })
        .map_err(py_err)?;
    let failures = reports.iter().filter(|r| !r.passes(tolerance)).count();
    if failures > 0 && raise_on_failure {
        return Err(VerificationError::new_err(format!(
            "{failures} of {} checks exceed tolerance {tolerance:e}",
            reports.len()
        )));
    }
    let out = PyDict::new(py);
    out.set_item("checked", reports.len())?;
    out.set_item("failures", failures)?;
    out.set_item("skipped", reports.iter().filter(|r| r.skipped).count())?;
    out.set_item(
        "max_rel_error",
        reports.iter().filter(|r| !r.skipped).map(|r| r.rel_error).fold(0.0, f64::max),
    )?;
    out.set_item("reports", to_py(py, &worst_per_trial(reports))?)?;
    Ok(out.into_any())
}

/// Monte Carlo replications of `methods` on a synthetic DGP, with the
/// DGP's correctly specified learners unless `learners` is given. Returns
/// one metrics dict per method.
#[pyfunction]
#[pyo3(signature = (dgp, estimand = None, methods = vec!["one-step".to_string()], n = 500, reps = 200, seed = 0, folds = 5, alpha = 0.05, learners = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    dgp: &str,
    estimand: Option<&Bound<'py, PyAny>>,
    methods: Vec<String>,
    n: usize,
    reps: usize,
    seed: u64,
    folds: usize,
    alpha: f64,
    learners: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let dgp = Dgp::from_name(dgp).map_err(py_err)?;
    let spec = match estimand {
        Some(e) => as_spec(e)?,
        None => default_spec(&dgp),
    };
    let methods = methods.iter().map(|m| parse_method(m)).collect::<PyResult<Vec<_>>>()?;
    let config = match learners {
        Some(_) => learner_config(&spec, learners, influence_lab::estimation::DEFAULT_TRIM)?,
        None => dgp.correct_config(&spec).map_err(py_err)?,
    };
    let plan = RunPlan {
        folds,
        alpha,
        ..RunPlan::new(n, reps, seed)
    };
    let reports = py
        .detach(|| run_replications_multi(&dgp, &spec, &methods, &config, &plan, None))
        .map_err(py_err)?;
    to_py(py, &reports)
}

/// `n` rows from a synthetic DGP.
#[pyfunction]
#[pyo3(signature = (dgp, n, seed = 0))]
fn generate(dgp: &str, n: usize, seed: u64) -> PyResult<Dataset> {
    let dgp = Dgp::from_name(dgp).map_err(py_err)?;
    Ok(Dataset {
        inner: dgp.generate(n, seed).map_err(py_err)?,
    })
}

/// True value of `estimand` under a DGP as `(value, mc_se)`; `mc_se` is
/// `None` for closed forms.
#[pyfunction]
#[pyo3(signature = (dgp, estimand = None, oracle_size = 1_000_000, seed = 0))]
fn truth(
    py: Python<'_>,
    dgp: &str,
    estimand: Option<&Bound<'_, PyAny>>,
    oracle_size: usize,
    seed: u64,
) -> PyResult<(f64, Option<f64>)> {
    let dgp = Dgp::from_name(dgp).map_err(py_err)?;
    let spec = match estimand {
        Some(e) => as_spec(e)?,
        None => default_spec(&dgp),
    };
    let t = py.detach(|| dgp.truth(&spec, oracle_size, seed)).map_err(py_err)?;
    Ok((t.value, t.mc_se))
}

/// Names of the built-in DGPs.
#[pyfunction]
fn dgps<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
    PyList::new(py, Dgp::names())
}

#[pymodule]
#[pyo3(name = "influence_lab")]
fn influence_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Estimand>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<EstimateReport>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_eif, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(truth, m)?)?;
    m.add_function(wrap_pyfunction!(dgps, m)?)?;
    m.add("InfluenceLabError", py.get_type::<InfluenceLabError>())?;
    m.add("ValidationError", py.get_type::<ValidationError>())?;
    m.add("NotPathwiseDifferentiableError", py.get_type::<NotPathwiseDifferentiableError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add("VerificationError", py.get_type::<VerificationError>())?;
    Ok(())
}
