//! Python bindings: `dvqr.Model`, `dvqr.PairCopula` and simulation helpers.

use dvqr_core::bicop::{parse_candidates, Criterion, Direction, Family, PairCopula as CorePair, Rotation};
use dvqr_core::dvine::{DVineRegModel, FitConfig, Mode};
use dvqr_core::margins::{ColumnKind, PseudoObs};
use dvqr_core::npcop::JitterSpec;
use dvqr_core::simkit;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: dvqr_core::Error) -> PyErr {
    use dvqr_core::Error as E;
    match e {
        E::FitFailed { .. } | E::DegenerateConditioner(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = dvqr_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn direction(first_given_second: bool) -> Direction {
    if first_given_second {
        Direction::FirstGivenSecond
    } else {
        Direction::SecondGivenFirst
    }
}

/// A bivariate parametric copula.
#[pyclass(name = "PairCopula", module = "dvqr", frozen)]
struct PyPairCopula {
    inner: CorePair,
}

#[pymethods]
impl PyPairCopula {
    #[new]
    #[pyo3(signature = (family, theta, rotation = 0))]
    fn new(family: &str, theta: f64, rotation: i64) -> PyResult<Self> {
        let inner = CorePair::new(parse::<Family>(family)?, Rotation::from_degrees(rotation).map_err(to_py)?, theta)
            .map_err(to_py)?;
        Ok(PyPairCopula { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (family, tau, rotation = 0))]
    fn from_tau(family: &str, tau: f64, rotation: i64) -> PyResult<Self> {
        let inner = CorePair::from_tau(parse::<Family>(family)?, Rotation::from_degrees(rotation).map_err(to_py)?, tau)
            .map_err(to_py)?;
        Ok(PyPairCopula { inner })
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family.name().to_string()
    }

    #[getter]
    fn rotation(&self) -> u16 {
        self.inner.rotation.degrees()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    fn cdf(&self, u: f64, v: f64) -> f64 {
        self.inner.cdf(u, v)
    }

    fn pdf(&self, u: f64, v: f64) -> f64 {
        self.inner.pdf(u, v)
    }

    /// h(x | given); `first_given_second` selects which argument is conditioned on.
    #[pyo3(signature = (x, given, first_given_second = true))]
    fn hfunc(&self, x: f64, given: f64, first_given_second: bool) -> f64 {
        self.inner.hfunc(x, given, direction(first_given_second))
    }

    #[pyo3(signature = (p, given, first_given_second = true))]
    fn hinv(&self, p: f64, given: f64, first_given_second: bool) -> f64 {
        self.inner.hinv(p, given, direction(first_given_second))
    }

    fn __repr__(&self) -> String {
        format!("PairCopula({})", self.inner)
    }
}

/// A fitted D-vine quantile regression model.
#[pyclass(name = "Model", module = "dvqr", frozen)]
struct PyModel {
    inner: DVineRegModel,
}

#[pymethods]
impl PyModel {
    /// Fits by forward selection. `columns` is column-major; `kinds` holds
    /// "continuous" or "discrete" per column.
    #[staticmethod]
    #[pyo3(signature = (columns, kinds, response, covariates, mode = "parametric", penalty = "aic", seed = 0, jitter_replicates = 1, families = None, max_covariates = None))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        columns: Vec<Vec<f64>>,
        kinds: Vec<String>,
        response: usize,
        covariates: Vec<usize>,
        mode: &str,
        penalty: &str,
        seed: u64,
        jitter_replicates: usize,
        families: Option<&str>,
        max_covariates: Option<usize>,
    ) -> PyResult<Self> {
        let kinds: Vec<ColumnKind> = kinds.iter().map(|k| parse(k)).collect::<PyResult<_>>()?;
        let mut cfg = FitConfig {
            mode: parse::<Mode>(mode)?,
            penalty: parse::<Criterion>(penalty)?,
            jitter: JitterSpec::new(seed, jitter_replicates).map_err(to_py)?,
            max_covariates,
            ..FitConfig::default()
        };
        if let Some(f) = families {
            cfg.candidates = parse_candidates(f).map_err(to_py)?;
        }
        let inner = py
            .detach(|| DVineRegModel::fit(&columns, &kinds, response, &covariates, &cfg))
            .map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: DVineRegModel::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Conditional quantiles at ascending `alphas` for a full-width row `x`
    /// (the response entry is ignored).
    fn predict(&self, alphas: Vec<f64>, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict_quantiles(&alphas, &x).map_err(to_py)
    }

    /// Predictions for many rows at once.
    fn predict_many(&self, py: Python<'_>, alphas: Vec<f64>, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        py.detach(|| {
            rows.iter()
                .map(|x| self.inner.predict_quantiles(&alphas, x))
                .collect::<dvqr_core::Result<Vec<_>>>()
        })
        .map_err(to_py)
    }

    /// Conditional CDF of a continuous copula-scale response value `v`.
    fn cond_cdf(&self, v: f64, x: Vec<f64>) -> PyResult<f64> {
        self.inner.cond_cdf(PseudoObs::continuous(v), &x).map_err(to_py)
    }

    fn cll(&self, columns: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.cll(&columns).map_err(to_py)
    }

    #[getter]
    fn covariates(&self) -> Vec<usize> {
        self.inner.covariates().to_vec()
    }

    #[getter]
    fn omitted(&self) -> Vec<usize> {
        self.inner.omitted().to_vec()
    }

    #[getter]
    fn response(&self) -> usize {
        self.inner.response()
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode().to_string()
    }

    #[getter]
    fn fitted_cll(&self) -> f64 {
        self.inner.fitted_cll()
    }

    #[getter]
    fn penalized_cll(&self) -> f64 {
        self.inner.fitted_penalized_cll()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(mode={}, covariates={:?}, penalized_cll={:.4})",
            self.inner.mode(),
            self.inner.covariates(),
            self.inner.fitted_penalized_cll()
        )
    }
}

/// Rows of an exchangeable Clayton sample of dimension `d`.
#[pyfunction]
fn sample_clayton(d: usize, theta: f64, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    simkit::sample_clayton_seeded(d, theta, n, seed).map_err(to_py)
}

#[pyfunction]
fn tick_loss(y: f64, q: f64, alpha: f64) -> f64 {
    simkit::tick_loss(y, q, alpha)
}

#[pyfunction]
fn mrase(predicted: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    simkit::mrase(&predicted, &truth).map_err(to_py)
}

/// Runs a simulation grid given as key = value text; returns one dict per result row.
#[pyfunction]
fn run_grid<'py>(py: Python<'py>, config: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = simkit::GridConfig::parse(config).map_err(to_py)?;
    let results = py
        .detach(|| simkit::run_grid(&cfg, &mut simkit::VarianceCache::default()))
        .map_err(to_py)?;
    results
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("snr", r.snr)?;
            d.set_item("n_train", r.n_train)?;
            d.set_item("N", r.binom_n)?;
            d.set_item("alpha", r.alpha)?;
            d.set_item("method", r.method.to_string())?;
            d.set_item("mrase", r.mrase)?;
            d.set_item("rase_sd", r.rase_sd)?;
            d.set_item("replications", r.replications)?;
            d.set_item("failures", r.failures)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn dvqr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPairCopula>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sample_clayton, m)?)?;
    m.add_function(wrap_pyfunction!(tick_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mrase, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
