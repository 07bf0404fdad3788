//! Python bindings. Structured results come back as plain dicts and lists
//! (the same shapes as the bundle's JSON documents).

use std::collections::BTreeMap;
use std::path::PathBuf;

use innoscope_core::classifier::MembershipClassifier;
use innoscope_core::dataset::{self, IndicatorPanel, Schema};
use innoscope_core::jdrc::{self, JdrcModel, JdrcOptions};
use innoscope_core::pipeline::{self, PipelineConfig, RunArtifacts};
use innoscope_core::shift::{self, KsOptions};
use innoscope_core::whatif::{self, Scenario, TrialLog};
use innoscope_core::{bundle, Error};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(innoscope, InnoscopeError, PyException);

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.code() {
        "lookup" => PyKeyError::new_err(msg),
        "argument" | "range" | "parse" | "classification" | "schema" | "data" => PyValueError::new_err(msg),
        "io" => PyOSError::new_err(msg),
        _ => InnoscopeError::new_err(msg),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| err(e.into()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Indicator panel: one row per region-year.
#[pyclass(module = "innoscope", frozen, from_py_object)]
#[derive(Clone)]
struct Panel {
    inner: IndicatorPanel,
}

#[pymethods]
impl Panel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Panel> {
        Ok(Panel { inner: dataset::load_scoreboard_path(&path, &Schema::default()).map_err(err)? })
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn indicator_names(&self) -> Vec<String> {
        self.inner.indicator_names.clone()
    }

    fn find(&self, region: &str, year: i32) -> PyResult<usize> {
        self.inner.find(region, year).map_err(err)
    }

    fn row(&self, py: Python<'_>, i: usize) -> PyResult<Py<PyAny>> {
        let r = self.inner.rows.get(i).ok_or_else(|| PyKeyError::new_err(format!("row {i} out of range")))?;
        to_py(py, r)
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.matrix())
    }

    /// Column-standardized indicator matrix (sample standard deviation).
    fn standardized(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&dataset::standardize(&self.inner).map_err(err)?.data))
    }

    fn correlation(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &dataset::correlation_analysis(&self.inner).map_err(err)?)
    }

    fn pca(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &pipeline::stage_pca(&self.inner, Default::default()).map_err(err)?)
    }

    fn shift_report(&self, py: Python<'_>, significance: Option<f64>) -> PyResult<Py<PyAny>> {
        to_py(py, &shift::shift_report(&self.inner, significance.unwrap_or(0.05), KsOptions::default()).map_err(err)?)
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!("Panel({} rows x {} indicators)", self.inner.n_rows(), self.inner.n_features())
    }
}

/// Fitted factorial or reduced k-means model.
#[pyclass(module = "innoscope", frozen, from_py_object)]
#[derive(Clone)]
struct Clustering {
    inner: JdrcModel,
}

#[pymethods]
impl Clustering {
    #[getter]
    fn method(&self) -> String {
        format!("{:?}", self.inner.method).to_lowercase()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes.clone()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.y)
    }

    /// Loadings of the p x q projection.
    #[getter]
    fn projection(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.a)
    }

    fn project(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&jdrc::project(&self.inner, &matrix(x)?).map_err(err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| err(e.into()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Clustering> {
        Ok(Clustering { inner: serde_json::from_str(text).map_err(|e| err(e.into()))? })
    }

    fn __repr__(&self) -> String {
        format!("Clustering(k={}, q={}, objective={:.6})", self.inner.k, self.inner.q, self.inner.objective)
    }
}

fn fit(method: jdrc::Method, x: Vec<Vec<f64>>, k: usize, q: usize, seed: u64, restarts: usize) -> PyResult<Clustering> {
    let x = matrix(x)?;
    let opts = JdrcOptions { seed, restarts, ..Default::default() };
    let m = match method {
        jdrc::Method::Fkm => jdrc::fit_fkm(&x, k, q, &opts),
        jdrc::Method::Rkm => jdrc::fit_rkm(&x, k, q, &opts),
    };
    Ok(Clustering { inner: m.map_err(err)? })
}

#[pyfunction]
#[pyo3(signature = (x, k, q, seed = 0, restarts = 100))]
fn fit_fkm(py: Python<'_>, x: Vec<Vec<f64>>, k: usize, q: usize, seed: u64, restarts: usize) -> PyResult<Clustering> {
    py.detach(|| fit(jdrc::Method::Fkm, x, k, q, seed, restarts))
}

#[pyfunction]
#[pyo3(signature = (x, k, q, seed = 0, restarts = 100))]
fn fit_rkm(py: Python<'_>, x: Vec<Vec<f64>>, k: usize, q: usize, seed: u64, restarts: usize) -> PyResult<Clustering> {
    py.detach(|| fit(jdrc::Method::Rkm, x, k, q, seed, restarts))
}

/// Trained membership classifier; takes raw (unscaled) indicator values.
#[pyclass(module = "innoscope", frozen, from_py_object)]
#[derive(Clone)]
struct Classifier {
    inner: MembershipClassifier,
}

#[pymethods]
impl Classifier {
    #[getter]
    fn target(&self) -> String {
        self.inner.target.clone()
    }

    fn predict_proba(&self, values: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_proba(&values).map_err(err)
    }

    fn logit(&self, values: Vec<f64>) -> PyResult<f64> {
        self.inner.logit(&values).map_err(err)
    }
}

/// Output of a full pipeline run.
#[pyclass(module = "innoscope", frozen)]
struct Artifacts {
    inner: RunArtifacts,
}

#[pymethods]
impl Artifacts {
    #[staticmethod]
    fn read(dir: PathBuf) -> PyResult<Artifacts> {
        Ok(Artifacts { inner: bundle::read_artifacts(&dir).map_err(err)? })
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        bundle::write_artifacts(&dir, &self.inner).map_err(err)
    }

    #[getter]
    fn config_fingerprint(&self) -> String {
        self.inner.config_fingerprint.clone()
    }

    #[getter]
    fn panel(&self) -> Panel {
        Panel { inner: self.inner.panel.clone() }
    }

    #[getter]
    fn clustering(&self) -> Clustering {
        Clustering { inner: self.inner.jdrc.clone() }
    }

    #[getter]
    fn classifier(&self) -> Classifier {
        Classifier { inner: self.inner.train.classifier.clone() }
    }

    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.config)
    }

    fn labeling(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.labels.labeling)
    }

    fn regions(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.labels.regions)
    }

    fn pca(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.pca)
    }

    fn evaluation(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.train.evaluation)
    }

    fn comparison(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.train.comparison)
    }

    fn shift(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.shift)
    }

    fn donors(&self, py: Python<'_>, tier: u8, indicator: &str) -> PyResult<Py<PyAny>> {
        let tiers = self.inner.labels.tiers();
        to_py(py, &whatif::donor_lookup(&self.inner.panel, &tiers, tier, indicator).map_err(err)?)
    }

    fn summary(&self) -> String {
        pipeline::cluster_summary(&self.inner)
    }

    fn __eq__(&self, other: &Artifacts) -> bool {
        self.inner == other.inner
    }
}

/// Run every stage. `config` is a dict with any subset of the pipeline
/// settings; missing keys take their defaults.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn run_pipeline(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Artifacts> {
    let cfg: PipelineConfig = match config {
        Some(c) => from_py(py, c)?,
        None => PipelineConfig::default(),
    };
    let art = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(err)?;
    Ok(Artifacts { inner: art })
}

/// Sequence of what-if trials on one base region-year.
#[pyclass(module = "innoscope")]
struct WhatIfSession {
    panel: IndicatorPanel,
    model: MembershipClassifier,
    log: TrialLog,
}

#[pymethods]
impl WhatIfSession {
    #[new]
    #[pyo3(signature = (artifacts, base_region, base_year, session = "py"))]
    fn new(artifacts: &Artifacts, base_region: &str, base_year: i32, session: &str) -> PyResult<WhatIfSession> {
        let panel = artifacts.inner.panel.clone();
        let row = panel.find(base_region, base_year).map_err(err)?;
        let model = artifacts.inner.train.classifier.clone();
        let log = TrialLog::new(session, &model.target, &panel.rows[row].region_id, base_year);
        Ok(WhatIfSession { panel, model, log })
    }

    #[pyo3(signature = (overrides = None, cumulative = true))]
    fn trial(&mut self, py: Python<'_>, overrides: Option<BTreeMap<String, f64>>, cumulative: bool) -> PyResult<Py<PyAny>> {
        let o = overrides.unwrap_or_default();
        let t = whatif::run_trial(&mut self.log, &self.panel, &o, cumulative, &self.model).map_err(err)?;
        to_py(py, t)
    }

    fn log(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.log)
    }

    fn to_tsv(&self) -> String {
        self.log.to_delimited('\t')
    }

    fn replay(&self) -> PyResult<Vec<f64>> {
        whatif::replay(&self.log, &self.model).map_err(err)
    }

    /// Probability along a grid of values for one indicator, starting from
    /// the latest trial (or the base row if there is none yet).
    fn sweep(&self, indicator: &str, start: f64, stop: f64, steps: usize) -> PyResult<Vec<(f64, f64)>> {
        let base = match self.log.last() {
            Some(t) => t.resolved.clone(),
            None => whatif::resolve(
                &self.panel,
                &Scenario {
                    base_region: self.log.base_region.clone(),
                    base_year: self.log.base_year,
                    overrides: BTreeMap::new(),
                    cumulative: true,
                },
            )
            .map_err(err)?,
        };
        let grid = whatif::linear_grid(start, stop, steps).map_err(err)?;
        let pts = whatif::sensitivity_sweep(&self.panel, &base, indicator, &grid, &self.model).map_err(err)?;
        Ok(pts.into_iter().map(|p| (p.value, p.probability)).collect())
    }
}

/// Two-sample Kolmogorov-Smirnov test; returns `(D, p)`.
#[pyfunction]
#[pyo3(signature = (a, b, small_sample_correction = false))]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>, small_sample_correction: bool) -> PyResult<(f64, f64)> {
    let r = shift::ks_two_sample(&a, &b, KsOptions { small_sample_correction }).map_err(err)?;
    Ok((r.d_stat, r.p_value))
}

#[pyfunction]
fn kolmogorov_sf(lambda: f64) -> f64 {
    shift::kolmogorov_sf(lambda)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("label vectors differ in length"));
    }
    Ok(jdrc::adjusted_rand_index(&a, &b))
}

#[pyfunction]
fn holm_adjust(p: Vec<f64>) -> Vec<f64> {
    dataset::holm_adjust(&p)
}

#[pymodule]
fn innoscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("InnoscopeError", m.py().get_type::<InnoscopeError>())?;
    m.add_class::<Panel>()?;
    m.add_class::<Clustering>()?;
    m.add_class::<Classifier>()?;
    m.add_class::<Artifacts>()?;
    m.add_class::<WhatIfSession>()?;
    m.add_function(wrap_pyfunction!(fit_fkm, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rkm, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(kolmogorov_sf, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(holm_adjust, m)?)?;
    Ok(())
}
