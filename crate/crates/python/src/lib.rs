//! Python bindings for the ulx pipeline. Exposes the numerics kernel, the
//! logic-space model, the curvature/divergence signals, answer extraction
//! and voting, and whole configured runs.
//!
//! Build: `cargo build -p ulx-py --release`, then import the produced
//! `libulx_py.so` as module `ulx_py` (see python/smoke_test.py).

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ulx_core::backends::PathId;
use ulx_core::config::RunConfig;
use ulx_core::logic_space::{LanguageId, LogicSpaceModel, ValidationSet};
use ulx_core::numerics::{self, Mat, Vector};
use ulx_core::pruning::{self, PruningConfig};
use ulx_core::selection::{select_candidates, QueryRenditions};
use ulx_core::{orchestrator, UlxError};

fn to_py_err(e: UlxError) -> PyErr {
    match e {
        UlxError::Config(_) | UlxError::Dimension(_) | UlxError::Numeric(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn vector(values: Vec<f64>) -> PyResult<Vector> {
    Vector::new(values).map_err(to_py_err)
}

/// Cosine similarity with the zero-norm guard (returns 0.0).
#[pyfunction]
fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    numerics::cosine(&vector(u)?, &vector(v)?).map_err(to_py_err)
}

/// Angle between two vectors in radians, in [0, pi].
#[pyfunction]
fn angle(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    numerics::angle(&vector(u)?, &vector(v)?).map_err(to_py_err)
}

type RowMajor = Vec<Vec<f64>>;

/// Thin SVD of a row-major matrix: returns (u_rows, singular_values,
/// v_rows) with singular values sorted descending.
#[pyfunction]
fn svd(rows: RowMajor) -> PyResult<(RowMajor, Vec<f64>, RowMajor)> {
    let a = Mat::from_rows(&rows).map_err(to_py_err)?;
    let dec = numerics::svd(&a).map_err(to_py_err)?;
    let to_rows = |m: &Mat| {
        (0..m.rows())
            .map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect())
            .collect()
    };
    Ok((to_rows(&dec.u), dec.s, to_rows(&dec.v)))
}

/// Contents of the last balanced `\boxed{...}` marker, or None.
#[pyfunction]
fn extract_answer(text: &str) -> Option<String> {
    orchestrator::extract_answer(text)
}

/// Plurality vote over (answer, lqs) pairs; None abstains on empty input.
#[pyfunction]
fn vote(entries: Vec<(String, u64)>) -> Option<String> {
    orchestrator::vote(&entries)
}

/// Curvature of a layer trajectory (list of per-layer state vectors).
/// Returns (r_m, r_a, kappa).
#[pyfunction]
#[pyo3(signature = (states, delta = 1e-8))]
fn curvature(states: Vec<Vec<f64>>, delta: f64) -> PyResult<(f64, f64, f64)> {
    let states: Vec<Vector> = states.into_iter().map(vector).collect::<PyResult<_>>()?;
    let sample = pruning::curvature(0, &states, delta).map_err(to_py_err)?;
    Ok((sample.r_m, sample.r_a, sample.kappa))
}

fn kappa_map(kappas: BTreeMap<String, f64>) -> PyResult<BTreeMap<PathId, f64>> {
    kappas
        .into_iter()
        .map(|(k, v)| k.parse::<PathId>().map(|p| (p, v)).map_err(to_py_err))
        .collect()
}

/// Cohort divergence test over per-path kappas. Returns a dict with
/// d_max, r_max, r_mean, and divergent.
#[pyfunction]
#[pyo3(signature = (kappas, eps_abs = 0.05, eps_rel = 0.5, gamma = 1.1, delta = 1e-8))]
fn divergence_test(
    py: Python<'_>,
    kappas: BTreeMap<String, f64>,
    eps_abs: f64,
    eps_rel: f64,
    gamma: f64,
    delta: f64,
) -> PyResult<Py<PyAny>> {
    let cfg = PruningConfig {
        eps_abs,
        eps_rel,
        gamma,
        delta,
        ..PruningConfig::default()
    };
    cfg.validate().map_err(to_py_err)?;
    let stats = pruning::divergence_test(0, &kappa_map(kappas)?, &cfg);
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("d_max", stats.d_max)?;
    dict.set_item("r_max", stats.r_max)?;
    dict.set_item("r_mean", stats.r_mean)?;
    dict.set_item("divergent", stats.divergent)?;
    Ok(dict.into())
}

/// Mean absolute kappa distance to the rest of the cohort, per path.
#[pyfunction]
fn centrality(kappas: BTreeMap<String, f64>) -> PyResult<BTreeMap<String, f64>> {
    let g = pruning::centrality(&kappa_map(kappas)?).map_err(to_py_err)?;
    Ok(g.into_iter().map(|(p, v)| (p.to_string(), v)).collect())
}

/// Execute a run configuration (ulx-config/1 JSON text; file paths inside
/// it resolve against the working directory) and return the report JSON.
#[pyfunction]
fn run(config_json: &str) -> PyResult<String> {
    let cfg = RunConfig::from_json(config_json).map_err(to_py_err)?;
    let report = cfg.execute().map_err(to_py_err)?;
    report.to_json().map_err(to_py_err)
}

/// A fitted per-layer logic-space model.
#[pyclass(name = "LogicSpace")]
struct PyLogicSpace {
    inner: LogicSpaceModel,
}

#[pymethods]
impl PyLogicSpace {
    /// Fit from validation items (sample_id, language, layer, state).
    #[staticmethod]
    #[pyo3(signature = (items, layer, rank = 4, lambda_ = 0.4))]
    fn fit(
        items: Vec<(String, String, usize, Vec<f64>)>,
        layer: usize,
        rank: usize,
        lambda_: f64,
    ) -> PyResult<Self> {
        let mut val = ValidationSet::new();
        for (sample, language, item_layer, state) in items {
            val.push(
                sample,
                LanguageId::new(language).map_err(to_py_err)?,
                item_layer,
                vector(state)?,
            );
        }
        let inner = LogicSpaceModel::fit(&val, layer, rank, lambda_).map_err(to_py_err)?;
        Ok(PyLogicSpace { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyLogicSpace {
            inner: LogicSpaceModel::from_json(text).map_err(to_py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn layer(&self) -> usize {
        self.inner.layer()
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda()
    }

    /// Project a hidden state into the unified logic space.
    fn project(&self, h: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .project(&vector(h)?)
            .map_err(to_py_err)?
            .into_inner())
    }

    /// Understanding similarity of two states after projection.
    fn uss(&self, h_src: Vec<f64>, h_tgt: Vec<f64>) -> PyResult<f64> {
        ulx_core::selection::uss(&self.inner, &vector(h_src)?, &vector(h_tgt)?).map_err(to_py_err)
    }

    /// Rank rendition states by USS against the source and keep the top k.
    /// Returns (language, score) pairs, descending.
    #[pyo3(signature = (states, source, k, pin_source = false))]
    fn select(
        &self,
        states: BTreeMap<String, Vec<f64>>,
        source: &str,
        k: usize,
        pin_source: bool,
    ) -> PyResult<Vec<(String, f64)>> {
        let mut map = BTreeMap::new();
        for (code, state) in states {
            map.insert(LanguageId::new(code).map_err(to_py_err)?, vector(state)?);
        }
        let source = LanguageId::new(source).map_err(to_py_err)?;
        let q = QueryRenditions::new(source, map).map_err(to_py_err)?;
        let candidates = select_candidates(&self.inner, &q, k, pin_source).map_err(to_py_err)?;
        Ok(candidates
            .entries
            .into_iter()
            .map(|(l, s)| (l.as_str().to_string(), s))
            .collect())
    }
}

#[pymodule]
fn ulx_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(angle, m)?)?;
    m.add_function(wrap_pyfunction!(svd, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(curvature, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_test, m)?)?;
    m.add_function(wrap_pyfunction!(centrality, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyLogicSpace>()?;
    Ok(())
}
