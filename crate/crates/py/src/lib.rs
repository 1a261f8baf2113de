use ascertain_core::fixtures;
use ascertain_core::loglinear::{self, Completion, SelectionReport};
use ascertain_core::rasch::{self, n_pairs};
use ascertain_core::report::{self, Report};
use ascertain_core::simstudy::{self, SimConfig, Study};
use ascertain_core::tables::{read_input, write_aggregated};
use ascertain_core::threesided::{self, BootstrapSpec, NullDistribution, Regime, ThreeSidedOutcome};
use ascertain_core::{CaptureModel, Completeness, ContingencyTable, Error, FitResult, FitSpec, RaschParams, TablePair, Variant};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ascertain, AscertainError, PyException, "Base class for errors raised by this module.");
create_exception!(ascertain, ValidationError, AscertainError, "Invalid input or arguments.");
create_exception!(ascertain, NumericalError, AscertainError, "A fit or selection failed numerically.");

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        ValidationError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Exposed and unexposed capture tables over the same lists.
#[pyclass(name = "Tables", module = "ascertain", frozen)]
struct PyTables {
    inner: TablePair,
}

#[pymethods]
impl PyTables {
    /// Tables from dense counts indexed by capture pattern, where list k is bit
    /// (J-1-k) of the index. Observed tables must have a zero first entry.
    #[staticmethod]
    #[pyo3(signature = (exposed, unexposed, complete=false, lists=None))]
    fn from_counts(exposed: Vec<u64>, unexposed: Vec<u64>, complete: bool, lists: Option<Vec<String>>) -> PyResult<Self> {
        let n = exposed.len().trailing_zeros() as usize;
        if !exposed.len().is_power_of_two() || exposed.len() < 2 {
            return Err(ValidationError::new_err(format!("{} counts is not a power of two", exposed.len())));
        }
        let completeness = if complete { Completeness::Complete } else { Completeness::MissingAllZero };
        let e = ContingencyTable::from_dense("E", n, completeness, exposed).map_err(to_py)?;
        let u = ContingencyTable::from_dense("U", n, completeness, unexposed).map_err(to_py)?;
        let inner = match lists {
            Some(names) => TablePair::with_list_names(e, u, names),
            None => TablePair::new(e, u),
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Tables from record CSV or aggregated CSV text.
    #[staticmethod]
    #[pyo3(signature = (text, exposed="E", unexposed="U", lists=None))]
    fn from_csv(text: &str, exposed: &str, unexposed: &str, lists: Option<Vec<String>>) -> PyResult<Self> {
        let parsed = read_input(text.as_bytes()).map_err(to_py)?;
        let inner =
            TablePair::from_groups(&parsed.groups, exposed, unexposed, lists.or(parsed.list_names)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// The bundled observed tables (lists DC, LE, CME).
    #[staticmethod]
    fn nvdrs() -> Self {
        Self { inner: fixtures::nvdrs() }
    }

    /// The bundled tables after log-linear completion.
    #[staticmethod]
    fn nvdrs_completed() -> Self {
        Self { inner: fixtures::nvdrs_completed() }
    }

    #[getter]
    fn list_names(&self) -> Vec<String> {
        self.inner.list_names.clone()
    }

    #[getter]
    fn exposed_counts(&self) -> Vec<u64> {
        self.inner.exposed.dense().to_vec()
    }

    #[getter]
    fn unexposed_counts(&self) -> Vec<u64> {
        self.inner.unexposed.dense().to_vec()
    }

    #[getter]
    fn is_complete(&self) -> bool {
        self.inner.is_complete()
    }

    /// Aggregated CSV (exposure,pattern,count).
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_aggregated(&mut buf, [&self.inner.exposed, &self.inner.unexposed]).map_err(to_py)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    fn __repr__(&self) -> String {
        format!(
            "Tables(lists={:?}, exposed={}, unexposed={}, complete={})",
            self.inner.list_names,
            self.inner.exposed.total(),
            self.inner.unexposed.total(),
            self.inner.is_complete()
        )
    }
}

/// A fitted capture model.
#[pyclass(name = "Fit", module = "ascertain", frozen)]
struct PyFit {
    inner: FitResult,
    names: Vec<String>,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.params.model().to_string()
    }

    #[getter]
    fn loglik(&self) -> f64 {
        self.inner.loglik
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    /// Shift of the exposed group (the mean shift for random-effects fits).
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.exposed_shift()
    }

    #[getter]
    fn sigma(&self) -> Option<f64> {
        self.inner.random_effects.map(|re| re.sigma)
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.params.alpha().to_vec()
    }

    #[getter]
    fn alpha2(&self) -> Vec<f64> {
        self.inner.params.alpha2().to_vec()
    }

    /// Poisson rates `(exposed, unexposed)` for observed-table fits.
    #[getter]
    fn gamma(&self) -> Option<(f64, f64)> {
        self.inner.rates.map(|r| (r.gamma_exposed, r.gamma_unexposed))
    }

    #[getter]
    fn miss_probabilities(&self) -> (f64, f64) {
        let d = &self.inner.derived;
        (d.miss_probability_exposed, d.miss_probability_unexposed)
    }

    #[getter]
    fn expected_missing(&self) -> (f64, f64) {
        let d = &self.inner.derived;
        (d.expected_missing_exposed, d.expected_missing_unexposed)
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// Parameter estimates by name, in report order.
    fn parameters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, value) in report::parameter_rows(&self.inner, &self.names) {
            d.set_item(name, value)?;
        }
        Ok(d)
    }

    fn report(&self) -> String {
        let mut r = Report::new();
        report::add_fit(&mut r, &self.inner, &self.names);
        r.render()
    }

    fn __repr__(&self) -> String {
        format!("Fit(variant={}, theta={:.4}, loglik={:.4})", self.inner.variant, self.theta(), self.inner.loglik)
    }
}

/// Bootstrap null distribution and three-sided decisions.
#[pyclass(name = "TestResult", module = "ascertain", frozen)]
struct PyTestResult {
    fit: FitResult,
    names: Vec<String>,
    dist: NullDistribution,
    outcomes: Vec<ThreeSidedOutcome>,
}

#[pymethods]
impl PyTestResult {
    #[getter]
    fn theta_hat(&self) -> f64 {
        self.fit.params.theta()
    }

    #[getter]
    fn regime(&self) -> String {
        self.dist.regime.to_string()
    }

    #[getter]
    fn draws(&self) -> Vec<f64> {
        self.dist.draws.clone()
    }

    #[getter]
    fn excluded(&self) -> usize {
        self.dist.excluded
    }

    /// `(q_alpha/2, q_alpha, q_1-alpha, q_1-alpha/2)` of the null draws.
    #[getter]
    fn quantiles(&self) -> (f64, f64, f64, f64) {
        let q = self.outcomes[0].quantiles;
        (q.lower_half, q.lower, q.upper, q.upper_half)
    }

    /// Margins above which H+ and H- are rejected.
    #[getter]
    fn thresholds(&self) -> (f64, f64) {
        (self.outcomes[0].delta1, self.outcomes[0].delta2)
    }

    /// One dict per margin with keys delta, reject_h0, reject_plus, reject_minus.
    fn decisions<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.outcomes
            .iter()
            .map(|o| {
                let d = PyDict::new(py);
                d.set_item("delta", o.delta)?;
                d.set_item("reject_h0", o.decisions.reject_h0)?;
                d.set_item("reject_plus", o.decisions.reject_plus)?;
                d.set_item("reject_minus", o.decisions.reject_minus)?;
                Ok(d)
            })
            .collect()
    }

    fn report(&self) -> String {
        let mut r = Report::new();
        report::add_fit(&mut r, &self.fit, &self.names);
        report::add_null_distribution(&mut r, &self.dist);
        report::add_outcomes(&mut r, &self.outcomes);
        r.render()
    }
}

/// Log-linear model selection with the completed tables.
#[pyclass(name = "Loglinear", module = "ascertain", frozen)]
struct PyLoglinear {
    selection: SelectionReport,
    completion: Completion,
    names: Vec<String>,
}

#[pymethods]
impl PyLoglinear {
    /// Terms of the selected model.
    #[getter]
    fn selected(&self) -> Vec<String> {
        self.selection.selected_candidate().terms.iter().map(|t| t.label(&self.names)).collect()
    }

    /// Unrounded missing-cell estimates `(exposed, unexposed)`.
    #[getter]
    fn missing(&self) -> (f64, f64) {
        (self.completion.raw_missing[0], self.completion.raw_missing[1])
    }

    #[getter]
    fn filled(&self) -> (u64, u64) {
        (self.completion.filled[0], self.completion.filled[1])
    }

    #[getter]
    fn totals(&self) -> (u64, u64) {
        (self.completion.totals[0], self.completion.totals[1])
    }

    #[getter]
    fn completed(&self) -> PyTables {
        PyTables { inner: self.completion.tables.clone() }
    }

    fn report(&self) -> String {
        let mut r = Report::new();
        let labels = [self.completion.tables.exposed.label(), self.completion.tables.unexposed.label()];
        report::add_selection(&mut r, &self.selection, &self.names, &labels);
        report::add_completion(&mut r, &self.completion);
        r.render()
    }
}

fn default_variant(tables: &TablePair) -> Variant {
    if tables.is_complete() {
        Variant::CompleteFreeTheta
    } else {
        Variant::IncompleteFreeTheta
    }
}

/// Fits a capture model. The variant defaults to the free-shift model that
/// matches the tables.
#[pyfunction]
#[pyo3(signature = (tables, variant=None, model="dynamic", seed=0, multistart=5))]
fn fit(
    py: Python<'_>,
    tables: &PyTables,
    variant: Option<&str>,
    model: &str,
    seed: u64,
    multistart: usize,
) -> PyResult<PyFit> {
    let variant = match variant {
        Some(v) => parse(v)?,
        None => default_variant(&tables.inner),
    };
    let spec = FitSpec::new(variant, parse(model)?).with_seed(seed).with_multistart(multistart);
    let t = &tables.inner;
    let inner = py.detach(|| ascertain_core::fit(t, &spec)).map_err(to_py)?;
    Ok(PyFit { inner, names: t.list_names.clone() })
}

/// Bootstraps the null distribution of the shift and decides the three-sided
/// test at each margin.
#[pyfunction]
#[pyo3(signature = (tables, deltas=vec![0.0], bootstrap=threesided::DEFAULT_REPLICATES, alpha=threesided::DEFAULT_ALPHA, seed=0, model="dynamic"))]
fn three_sided_test(
    py: Python<'_>,
    tables: &PyTables,
    deltas: Vec<f64>,
    bootstrap: usize,
    alpha: f64,
    seed: u64,
    model: &str,
) -> PyResult<PyTestResult> {
    if deltas.is_empty() {
        return Err(ValidationError::new_err("at least one margin is required"));
    }
    let model: CaptureModel = parse(model)?;
    let t = &tables.inner;
    let (fit, dist, outcomes) = py
        .detach(|| -> ascertain_core::Result<_> {
            let fit = ascertain_core::fit(t, &FitSpec::new(default_variant(t), model).with_seed(seed))?;
            let spec = BootstrapSpec { model, ..BootstrapSpec::new(bootstrap, seed) };
            let dist = threesided::bootstrap_null(t, Regime::of(t), &spec)?;
            let outcomes = deltas
                .iter()
                .map(|&d| threesided::decide(fit.params.theta(), &dist, alpha, d))
                .collect::<ascertain_core::Result<Vec<_>>>()?;
            Ok((fit, dist, outcomes))
        })
        .map_err(to_py)?;
    Ok(PyTestResult { fit, names: t.list_names.clone(), dist, outcomes })
}

/// Selects a log-linear model jointly for both tables and fills the
/// unobserved cells with the truncated estimates.
#[pyfunction]
#[pyo3(signature = (tables, lower_p=0.05, exclude_saturated=true))]
fn select_loglinear(tables: &PyTables, lower_p: f64, exclude_saturated: bool) -> PyResult<PyLoglinear> {
    let t = &tables.inner;
    let selection = loglinear::select_model(&[&t.exposed, &t.unexposed], lower_p, exclude_saturated).map_err(to_py)?;
    let completion = loglinear::complete_tables(t, [selection.missing[0], selection.missing[1]]).map_err(to_py)?;
    Ok(PyLoglinear { selection, completion, names: t.list_names.clone() })
}

/// Cell probabilities in pattern-index order at the given shift. Without
/// interactions the independent model is used.
#[pyfunction]
#[pyo3(signature = (alpha, alpha2=None, shift=0.0))]
fn cell_probabilities(alpha: Vec<f64>, alpha2: Option<Vec<f64>>, shift: f64) -> PyResult<Vec<f64>> {
    let params = match alpha2 {
        Some(a2) => RaschParams::dynamic(alpha, a2, 0.0),
        None => {
            let n = alpha.len();
            RaschParams::dynamic(alpha, vec![0.0; n_pairs(n)], 0.0)
        }
    }
    .map_err(to_py)?;
    Ok(rasch::cell_probabilities(&params, shift))
}

/// Runs a simulation study and returns its rows as CSV. `preset` is
/// "bias" or "estimators"; `config` is TOML text.
#[pyfunction]
#[pyo3(signature = (preset=None, config=None, study=None, replicates=None, seed=None))]
fn simulate(
    py: Python<'_>,
    preset: Option<&str>,
    config: Option<&str>,
    study: Option<&str>,
    replicates: Option<usize>,
    seed: Option<u64>,
) -> PyResult<String> {
    let text = match (preset, config) {
        (Some("bias"), None) => fixtures::BIAS_STUDY_TOML,
        (Some("estimators"), None) => fixtures::ESTIMATOR_STUDY_TOML,
        (Some(other), None) => return Err(ValidationError::new_err(format!("unknown preset {other:?}"))),
        (None, Some(text)) => text,
        _ => return Err(ValidationError::new_err("pass exactly one of preset and config")),
    };
    let mut cfg = SimConfig::from_toml(text).map_err(to_py)?;
    if let Some(n) = replicates {
        cfg.replicates = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(to_py)?;
    let study: Study = match study {
        Some(s) => parse(s)?,
        None => cfg.study.ok_or_else(|| ValidationError::new_err("no study given"))?,
    };
    py.detach(|| match study {
        Study::Bias => simstudy::bias_study(&cfg).map(|r| simstudy::bias_csv(&r)),
        Study::Estimators => simstudy::estimator_study(&cfg).map(|r| simstudy::estimator_csv(&r)),
        Study::Or => simstudy::or_bias(&cfg).map(|r| simstudy::or_csv(&r)),
    })
    .map_err(to_py)
}

#[pymodule]
fn ascertain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("AscertainError", py.get_type::<AscertainError>())?;
    m.add("ValidationError", py.get_type::<ValidationError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyTables>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyTestResult>()?;
    m.add_class::<PyLoglinear>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(three_sided_test, m)?)?;
    m.add_function(wrap_pyfunction!(select_loglinear, m)?)?;
    m.add_function(wrap_pyfunction!(cell_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
