//! Python bindings for the core pipeline: dataset generation, training,
//! evaluation, and the standalone numeric operations (CTC loss, greedy
//! decoding, edit distance, relative improvement).

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use accent_am::checkpoint;
use accent_am::corpus::{generate_corpus, read_dataset, write_dataset, GeneratorConfig};
use accent_am::ctc;
use accent_am::metrics;
use accent_am::model::{AmConfig, ModelKind};
use accent_am::tensor::Tensor;
use accent_am::train::{
    evaluate, prepare, run_training, EvalReport, HeadSelection, TrainingConfig, LOG_HEADER,
};

fn to_py_err(e: accent_am::Error) -> PyErr {
    match e {
        accent_am::Error::Config(_) | accent_am::Error::InvalidInput(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn tensor_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let n = rows.len();
    let m = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Tensor::from_vec(n, m, rows.into_iter().flatten().collect()).map_err(to_py_err)
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Synthetic-corpus generator settings; defaults mirror the Rust side.
#[pyclass(name = "GeneratorConfig")]
#[derive(Clone)]
struct PyGeneratorConfig {
    inner: GeneratorConfig,
}

#[pymethods]
impl PyGeneratorConfig {
    #[new]
    #[pyo3(signature = (*, num_phones=None, feature_dim=None, frames_per_phone=None,
        phones_per_utterance=None, prototype_scale=None, accent_shift=None,
        shifted_fraction=None, noise_sigma=None, utterances_per_accent=None, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_phones: Option<usize>,
        feature_dim: Option<usize>,
        frames_per_phone: Option<(usize, usize)>,
        phones_per_utterance: Option<(usize, usize)>,
        prototype_scale: Option<f64>,
        accent_shift: Option<f64>,
        shifted_fraction: Option<f64>,
        noise_sigma: Option<f64>,
        utterances_per_accent: Option<usize>,
        seed: Option<u64>,
    ) -> Self {
        let mut inner = GeneratorConfig::default();
        if let Some(v) = num_phones {
            inner.num_phones = v;
        }
        if let Some(v) = feature_dim {
            inner.feature_dim = v;
        }
        if let Some(v) = frames_per_phone {
            inner.frames_per_phone = v;
        }
        if let Some(v) = phones_per_utterance {
            inner.phones_per_utterance = v;
        }
        if let Some(v) = prototype_scale {
            inner.prototype_scale = v;
        }
        if let Some(v) = accent_shift {
            inner.accent_shift = v;
        }
        if let Some(v) = shifted_fraction {
            inner.shifted_fraction = v;
        }
        if let Some(v) = noise_sigma {
            inner.noise_sigma = v;
        }
        if let Some(v) = utterances_per_accent {
            inner.utterances_per_accent = v;
        }
        if let Some(v) = seed {
            inner.seed = v;
        }
        PyGeneratorConfig { inner }
    }
}

/// Network architecture settings; defaults mirror the Rust side.
#[pyclass(name = "ModelConfig")]
#[derive(Clone)]
struct PyModelConfig {
    inner: AmConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (*, feature_dim=None, num_trunk_layers=None, trunk_hidden=None,
        projection_units=None, phones_us=None, phones_uk=None, aid_branch_layer=None,
        aid_branch_hidden=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        feature_dim: Option<usize>,
        num_trunk_layers: Option<usize>,
        trunk_hidden: Option<usize>,
        projection_units: Option<usize>,
        phones_us: Option<usize>,
        phones_uk: Option<usize>,
        aid_branch_layer: Option<usize>,
        aid_branch_hidden: Option<usize>,
    ) -> Self {
        let mut inner = AmConfig::default();
        if let Some(v) = feature_dim {
            inner.feature_dim = v;
        }
        if let Some(v) = num_trunk_layers {
            inner.num_trunk_layers = v;
        }
        if let Some(v) = trunk_hidden {
            inner.trunk_hidden = v;
        }
        if let Some(v) = projection_units {
            inner.projection_units = v;
        }
        if let Some(v) = phones_us {
            inner.phones_us = v;
        }
        if let Some(v) = phones_uk {
            inner.phones_uk = v;
        }
        if let Some(v) = aid_branch_layer {
            inner.aid_branch_layer = v;
        }
        if let Some(v) = aid_branch_hidden {
            inner.aid_branch_hidden = v;
        }
        PyModelConfig { inner }
    }
}

/// Optimization settings; defaults mirror the Rust side.
#[pyclass(name = "TrainingConfig")]
#[derive(Clone)]
struct PyTrainingConfig {
    inner: TrainingConfig,
}

#[pymethods]
impl PyTrainingConfig {
    #[new]
    #[pyo3(signature = (*, alpha=None, lr_init=None, init_range=None, max_frames=None,
        heldout_fraction=None, max_epochs=None, min_lr=None, accumulate_utterances=None,
        seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        alpha: Option<f64>,
        lr_init: Option<f64>,
        init_range: Option<f64>,
        max_frames: Option<usize>,
        heldout_fraction: Option<f64>,
        max_epochs: Option<usize>,
        min_lr: Option<f64>,
        accumulate_utterances: Option<usize>,
        seed: Option<u64>,
    ) -> Self {
        let mut inner = TrainingConfig::default();
        if let Some(v) = alpha {
            inner.alpha = v;
        }
        if let Some(v) = lr_init {
            inner.lr_init = v;
        }
        if let Some(v) = init_range {
            inner.init_lo = -v;
            inner.init_hi = v;
        }
        if let Some(v) = max_frames {
            inner.max_frames = v;
        }
        if let Some(v) = heldout_fraction {
            inner.heldout_fraction = v;
        }
        if let Some(v) = max_epochs {
            inner.max_epochs = v;
        }
        if let Some(v) = min_lr {
            inner.min_lr = v;
        }
        if let Some(v) = accumulate_utterances {
            inner.accumulate_utterances = v;
        }
        if let Some(v) = seed {
            inner.seed = v;
        }
        PyTrainingConfig { inner }
    }
}

/// Generate a synthetic two-accent corpus and write it as a dataset file.
#[pyfunction]
#[pyo3(signature = (path, config=None))]
fn generate_dataset(path: &str, config: Option<PyGeneratorConfig>) -> PyResult<usize> {
    let config = config.map(|c| c.inner).unwrap_or_default();
    let corpus = generate_corpus(&config).map_err(to_py_err)?;
    write_dataset(&corpus, Path::new(path)).map_err(to_py_err)?;
    Ok(corpus.utterances.len())
}

/// Summary of a dataset file: utterance count, feature dim, inventories,
/// per-accent counts.
#[pyfunction]
fn dataset_info(py: Python<'_>, path: &str) -> PyResult<PyObject> {
    let corpus = read_dataset(Path::new(path)).map_err(to_py_err)?;
    let us = corpus
        .utterances
        .iter()
        .filter(|u| u.accent == accent_am::model::Accent::Us)
        .count();
    let dict = PyDict::new_bound(py);
    dict.set_item("num_utterances", corpus.utterances.len())?;
    dict.set_item("feature_dim", corpus.feature_dim)?;
    dict.set_item("phones_us", corpus.phones_us)?;
    dict.set_item("phones_uk", corpus.phones_uk)?;
    dict.set_item("num_us", us)?;
    dict.set_item("num_uk", corpus.utterances.len() - us)?;
    Ok(dict.into())
}

fn log_row_dict<'py>(
    py: Python<'py>,
    row: &accent_am::train::EpochLog,
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new_bound(py);
    dict.set_item("epoch", row.epoch)?;
    dict.set_item("train_loss", row.train_loss)?;
    dict.set_item("heldout_loss", row.heldout_loss)?;
    dict.set_item("per_us", row.per_us)?;
    dict.set_item("per_uk", row.per_uk)?;
    dict.set_item("aid_acc", row.aid_acc)?;
    dict.set_item("lr", row.lr)?;
    Ok(dict)
}

/// Train one model variant (`aspec-us`, `aspec-uk`, `mtlp`, `joint`, or
/// `aid`) on a dataset file. Writes the checkpoint and the CSV training
/// log, and returns the per-epoch log as a list of dicts.
#[pyfunction]
#[pyo3(signature = (data_path, model, checkpoint_path, log_path=None,
    model_config=None, training_config=None))]
fn train(
    py: Python<'_>,
    data_path: &str,
    model: &str,
    checkpoint_path: &str,
    log_path: Option<&str>,
    model_config: Option<PyModelConfig>,
    training_config: Option<PyTrainingConfig>,
) -> PyResult<PyObject> {
    let kind: ModelKind = model.parse().map_err(to_py_err)?;
    let am = model_config.map(|c| c.inner).unwrap_or_default();
    let tc = training_config.map(|c| c.inner).unwrap_or_default();
    let corpus = read_dataset(Path::new(data_path)).map_err(to_py_err)?;
    let outcome = run_training(&corpus, kind, &am, &tc).map_err(to_py_err)?;
    checkpoint::save(&outcome.checkpoint, Path::new(checkpoint_path)).map_err(to_py_err)?;
    if let Some(log_path) = log_path {
        let mut log = String::from(LOG_HEADER);
        log.push('\n');
        for row in &outcome.log {
            log.push_str(&row.csv_row());
            log.push('\n');
        }
        std::fs::write(log_path, log)?;
    }
    let rows: Vec<_> = outcome
        .log
        .iter()
        .map(|r| log_row_dict(py, r))
        .collect::<PyResult<_>>()?;
    Ok(rows.into_py(py))
}

fn report_dict(py: Python<'_>, report: &EvalReport) -> PyResult<PyObject> {
    let dict = PyDict::new_bound(py);
    dict.set_item("per_us", report.per_us)?;
    dict.set_item("per_uk", report.per_uk)?;
    dict.set_item("overall_per", report.overall_per())?;
    dict.set_item("n_us", report.n_us)?;
    dict.set_item("n_uk", report.n_uk)?;
    dict.set_item("aid_accuracy", report.aid.as_ref().map(|a| a.accuracy))?;
    dict.set_item("switch_errors", report.switch_errors)?;
    Ok(dict.into())
}

/// Evaluate a checkpoint on a dataset. Modes: `oracle`, `switched:joint`,
/// `switched:ind-aid` (the latter requires `aid_checkpoint_path`).
#[pyfunction]
#[pyo3(signature = (checkpoint_path, data_path, mode="oracle", aid_checkpoint_path=None))]
fn evaluate_checkpoint(
    py: Python<'_>,
    checkpoint_path: &str,
    data_path: &str,
    mode: &str,
    aid_checkpoint_path: Option<&str>,
) -> PyResult<PyObject> {
    let ckpt = checkpoint::load(Path::new(checkpoint_path)).map_err(to_py_err)?;
    let corpus = read_dataset(Path::new(data_path)).map_err(to_py_err)?;
    let prepared = prepare(&corpus.utterances).map_err(to_py_err)?;
    let aid_ckpt = match (mode, aid_checkpoint_path) {
        ("switched:ind-aid", Some(path)) => {
            Some(checkpoint::load(Path::new(path)).map_err(to_py_err)?)
        }
        ("switched:ind-aid", None) => {
            return Err(PyValueError::new_err(
                "mode switched:ind-aid requires aid_checkpoint_path",
            ))
        }
        _ => None,
    };
    let selection = match mode {
        "oracle" => HeadSelection::Oracle,
        "switched:joint" => HeadSelection::OwnAid,
        "switched:ind-aid" => {
            let aid = aid_ckpt.as_ref().expect("loaded above");
            HeadSelection::External {
                aid_params: &aid.params,
                aid_config: &aid.config,
            }
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown mode `{other}`; expected oracle, switched:joint, or switched:ind-aid"
            )))
        }
    };
    let report = evaluate(&ckpt.params, &ckpt.config, ckpt.kind, &prepared, &selection)
        .map_err(to_py_err)?;
    report_dict(py, &report)
}

/// CTC loss (−ln p(labels | lattice)) and its gradient with respect to the
/// T×(V+1) log-probability lattice. Column 0 is the blank.
#[pyfunction]
fn ctc_loss(log_probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let lattice = tensor_from_rows(log_probs)?;
    let result = ctc::ctc_forward_backward(&lattice, &labels).map_err(to_py_err)?;
    Ok((result.neg_log_likelihood, tensor_to_rows(&result.grad_log_probs)))
}

/// Best-path decode of a log-probability lattice: argmax per frame, merge
/// duplicates, drop blanks.
#[pyfunction]
fn greedy_decode(log_probs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    Ok(ctc::greedy_decode(&tensor_from_rows(log_probs)?))
}

/// Levenshtein distance between two label sequences.
#[pyfunction]
fn edit_distance(a: Vec<usize>, b: Vec<usize>) -> usize {
    metrics::edit_distance(&a, &b)
}

/// (system − baseline)/baseline × 100; negative means improvement.
#[pyfunction]
fn relative_improvement(baseline: f64, system: f64) -> PyResult<f64> {
    metrics::relative_improvement(baseline, system).map_err(to_py_err)
}

#[pymodule]
fn accent_am_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeneratorConfig>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyTrainingConfig>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_info, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_decode, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(relative_improvement, m)?)?;
    Ok(())
}
