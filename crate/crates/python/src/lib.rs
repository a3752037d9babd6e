//! Python bindings: envelope statistics, metrics, saved models and the
//! pipeline commands. Configurations travel as JSON strings; structured
//! results come back as Python objects decoded from JSON.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use qus_core::envstats::{self, FeatureConfig};
use qus_core::evaluation::{auc as core_auc, BootstrapConfig, EvalReport, ScoredSet};
use qus_core::pipeline::{self, EvalArgs, FinetuneArgs, MapArgs, ModelId, RunConfig, SavedModel, TrainArgs};
use qus_core::{EnvelopePatch, Label, QusError};

create_exception!(qus, Error, PyException, "Raised for any qus failure; `code` mirrors the CLI exit code.");

fn err(e: QusError) -> PyErr {
    let code = e.exit_code();
    let py_err = Error::new_err(e.to_string());
    Python::attach(|py| {
        let _ = py_err.value(py).setattr("code", code);
    });
    py_err
}

fn to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).expect("json value serializes");
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn config(json: Option<&str>, seed: Option<u64>) -> PyResult<RunConfig> {
    let cfg = match json {
        Some(text) => RunConfig::from_json(text).map_err(err)?,
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn patch(rows: Vec<Vec<f64>>) -> PyResult<EnvelopePatch> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(err(QusError::InvalidArgument("patch rows differ in length".into())));
    }
    let values = Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
        .map_err(|e| err(QusError::InvalidArgument(e.to_string())))?;
    EnvelopePatch::new(values, Label::Unknown, 0.0, "python").map_err(err)
}

/// Raw statistics `(r, s, entropy, t)` of one envelope patch.
#[pyfunction]
#[pyo3(signature = (patch_rows, v = 0.5, entropy_bins = 100))]
fn features(patch_rows: Vec<Vec<f64>>, v: f64, entropy_bins: usize) -> PyResult<(f64, f64, f64, f64)> {
    let cfg = FeatureConfig { v, entropy_bins };
    let f = envstats::featurize(&patch(patch_rows)?, &cfg).map_err(err)?;
    Ok((f.r, f.s, f.entropy, f.t))
}

/// Moment estimate of the Nakagami shape parameter.
#[pyfunction]
fn nakagami_m(patch_rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(envstats::nakagami(&patch(patch_rows)?).map_err(err)?.m)
}

/// Area under the ROC curve; labels are 1 for FDS and 0 for LDS.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    Ok(core_auc(&ScoredSet::new(scores, labels).map_err(err)?))
}

/// AUC with bootstrap interval and Youden index, as a dict.
#[pyfunction]
#[pyo3(signature = (scores, labels, n_resamples = 1000, level = 0.95, seed = 0))]
fn evaluate(py: Python<'_>, scores: Vec<f64>, labels: Vec<u8>, n_resamples: usize, level: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let set = ScoredSet::new(scores, labels).map_err(err)?;
    let report = EvalReport::compute(&set, &BootstrapConfig { n_resamples, level, seed }).map_err(err)?;
    to_py(py, &serde_json::to_value(report).expect("report serializes"))
}

/// The default run configuration as a JSON string.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes")
}

/// A trained classifier loaded from a checkpoint.
#[pyclass(name = "Model")]
struct PyModel {
    inner: SavedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: SavedModel::load(&path).map_err(err)? })
    }

    fn save(&mut self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.id.to_string()
    }

    #[getter]
    fn outputs_probability(&self) -> bool {
        self.inner.outputs_probability()
    }

    #[getter]
    fn patch_shape(&self) -> Option<(usize, usize)> {
        self.inner.patch_shape()
    }

    /// One score per patch; FDS probabilities except for the SVM.
    #[pyo3(signature = (patches, chunk = 32))]
    fn score(&mut self, patches: Vec<Vec<Vec<f64>>>, chunk: usize) -> PyResult<Vec<f64>> {
        let patches = patches.into_iter().map(patch).collect::<PyResult<Vec<_>>>()?;
        self.inner.score(&patches, chunk).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.inner.id)
    }
}

fn quiet(_: &str, _: &qus_core::training::EpochRecord) {}

/// Simulates a dataset into `out`; returns the per-split summary.
#[pyfunction]
#[pyo3(signature = (out, config = None, seed = None))]
fn simulate(py: Python<'_>, out: PathBuf, config: Option<&str>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let cfg = self::config(config, seed)?;
    let manifest = pipeline::cmd_simulate(&cfg, &out).map_err(err)?;
    to_py(py, &serde_json::to_value(&manifest.splits).expect("splits serialize"))
}

/// Writes feature CSVs and the training normalizer; returns the normalizer.
#[pyfunction]
#[pyo3(signature = (data, out, config = None))]
fn featurize(py: Python<'_>, data: PathBuf, out: PathBuf, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = self::config(config, None)?;
    let norm = pipeline::cmd_featurize(&cfg, &data, &out).map_err(err)?;
    to_py(py, &serde_json::to_value(norm).expect("normalizer serializes"))
}

#[pyfunction]
#[pyo3(signature = (data, model, out, config = None, seed = None, cnn_branch = None, mlp_branch = None))]
fn train(
    data: PathBuf,
    model: &str,
    out: PathBuf,
    config: Option<&str>,
    seed: Option<u64>,
    cnn_branch: Option<PathBuf>,
    mlp_branch: Option<PathBuf>,
) -> PyResult<PyModel> {
    let cfg = self::config(config, seed)?;
    let model: ModelId = model.parse().map_err(err)?;
    let args = TrainArgs { data, model, cnn_branch, mlp_branch };
    Ok(PyModel { inner: pipeline::cmd_train(&cfg, &args, &out, &mut quiet).map_err(err)? })
}

/// Evaluates a checkpoint on a dataset split; returns the report dict.
#[pyfunction]
#[pyo3(signature = (model, data, out, split = "test", config = None, seed = None))]
fn eval(py: Python<'_>, model: PathBuf, data: PathBuf, out: PathBuf, split: &str, config: Option<&str>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let cfg = self::config(config, seed)?;
    let args = EvalArgs { model, data, split: split.to_string() };
    pipeline::cmd_eval(&cfg, &args, &out).map_err(err)?;
    let text = std::fs::read_to_string(out.join("report.json")).map_err(|e| err(QusError::Io { path: out.clone(), source: e }))?;
    let value: serde_json::Value = serde_json::from_str(&text).expect("report.json is valid");
    to_py(py, &value)
}

/// Probability map of one frame file as a list of rows.
#[pyfunction]
#[pyo3(signature = (model, frame, out, overlap = None, config = None))]
fn probability_map(model: PathBuf, frame: PathBuf, out: PathBuf, overlap: Option<f64>, config: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
    let cfg = self::config(config, None)?;
    let map = pipeline::cmd_map(&cfg, &MapArgs { model, frame, overlap }, &out).map_err(err)?;
    Ok(map.values.chunks(map.cols).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
#[pyo3(signature = (model, data, out, config = None, seed = None, eval_data = None))]
fn finetune(model: PathBuf, data: PathBuf, out: PathBuf, config: Option<&str>, seed: Option<u64>, eval_data: Option<PathBuf>) -> PyResult<PyModel> {
    let cfg = self::config(config, seed)?;
    let args = FinetuneArgs { eval_data, ..FinetuneArgs::new(model, data) };
    Ok(PyModel { inner: pipeline::cmd_finetune(&cfg, &args, &out, &mut quiet).map_err(err)? })
}

#[pymodule]
fn qus(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("Error", m.py().get_type::<Error>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(features, m)?)?;
    m.add_function(wrap_pyfunction!(nakagami_m, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(eval, m)?)?;
    m.add_function(wrap_pyfunction!(probability_map, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    Ok(())
}
