//! Python bindings: preprocessing, the model, voting, metrics, accounting
//! and the synthetic generator.

use std::path::PathBuf;

use lcnn::infer::{diagnose_sequence, majority_vote as vote, predict_inputs};
use lcnn::metrics::{ConfusionMatrix, MetricBlock};
use lcnn::model::{
    complexity_report as report, count_flops as flops, count_params as params_of, init_params,
    load_checkpoint, save_checkpoint, ModelConfig, ModelParams,
};
use lcnn::numkit::{Matrix, Rng};
use lcnn::signal::{
    load_sequence as load, preprocess as prep, DiffMode, Label, SegmentationConfig, SequenceFormat,
    FEATURES,
};
use lcnn::synth::{generate_dataset, SynthConfig};
use lcnn::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn format_for(path: &PathBuf, format: Option<&str>) -> PyResult<SequenceFormat> {
    match format {
        Some(f) => parse(f),
        None => Ok(SequenceFormat::from_path(path)),
    }
}

fn segmentation(window: usize, stride: usize, diff_mode: &str) -> PyResult<SegmentationConfig> {
    let seg = SegmentationConfig {
        window,
        stride,
        diff_mode: parse::<DiffMode>(diff_mode)?,
    };
    seg.validate().map_err(py_err)?;
    Ok(seg)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Reads a recording; returns a dict of channel lists.
#[pyfunction]
#[pyo3(signature = (path, format=None))]
fn load_sequence<'py>(py: Python<'py>, path: PathBuf, format: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let seq = load(&path, format_for(&path, format)?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("subject_id", &seq.subject_id)?;
    d.set_item("label", seq.label.map(|l| l.as_str()))?;
    d.set_item("task", &seq.task)?;
    d.set_item("t", &seq.t)?;
    d.set_item("x", &seq.x)?;
    d.set_item("y", &seq.y)?;
    d.set_item("azimuth", &seq.azimuth)?;
    d.set_item("altitude", &seq.altitude)?;
    d.set_item("pressure", &seq.pressure)?;
    Ok(d)
}

/// Normalize, difference and segment a recording into `window x 5` patches.
#[pyfunction]
#[pyo3(signature = (path, window=128, stride=64, diff_mode="geometric", format=None))]
fn preprocess(
    path: PathBuf,
    window: usize,
    stride: usize,
    diff_mode: &str,
    format: Option<&str>,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let seg = segmentation(window, stride, diff_mode)?;
    let seq = load(&path, format_for(&path, format)?).map_err(py_err)?;
    let patches = prep(&seq, &seg).map_err(py_err)?;
    Ok(patches.iter().map(|p| rows(&p.values)).collect())
}

#[pyfunction]
#[pyo3(signature = (window=128))]
fn count_params<'py>(py: Python<'py>, window: usize) -> PyResult<Bound<'py, PyDict>> {
    let p = params_of(&ModelConfig::with_window(window)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("lstm", p.lstm)?;
    d.set_item("conv1", p.conv1)?;
    d.set_item("conv2", p.conv2)?;
    d.set_item("dense", p.dense)?;
    d.set_item("total", p.total)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (window=128))]
fn count_flops<'py>(py: Python<'py>, window: usize) -> PyResult<Bound<'py, PyDict>> {
    let f = flops(&ModelConfig::with_window(window)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("total_macs", f.total_macs)?;
    d.set_item("headline_flops", f.headline_flops)?;
    d.set_item("extended_flops", f.extended_flops)?;
    d.set_item("lstm_step_macs", f.lstm_step_macs)?;
    Ok(d)
}

/// Text report of parameters and FLOPs next to the reference totals.
#[pyfunction]
#[pyo3(signature = (window=128))]
fn complexity_report(window: usize) -> PyResult<String> {
    report(&ModelConfig::with_window(window)).map_err(py_err)
}

/// Thresholded vote over patch labels ("PD"/"HC").
#[pyfunction]
#[pyo3(signature = (labels, alpha=0.5, subject_id="sequence"))]
fn majority_vote<'py>(
    py: Python<'py>,
    labels: Vec<String>,
    alpha: f64,
    subject_id: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let labels: Vec<Label> = labels.iter().map(|l| parse(l)).collect::<PyResult<_>>()?;
    let v = vote(subject_id, &labels, alpha).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("predicted", v.predicted.as_str())?;
    d.set_item("r", v.pd_fraction)?;
    d.set_item("n_patches", v.n_patches)?;
    Ok(d)
}

/// Accuracy, recall, F1 and MCC; undefined values are `None`.
#[pyfunction]
#[pyo3(signature = (tp, tn, fp, fn_))]
fn metrics<'py>(py: Python<'py>, tp: u64, tn: u64, fp: u64, fn_: u64) -> PyResult<Bound<'py, PyDict>> {
    let m = MetricBlock::from_confusion(&ConfusionMatrix::new(tp, tn, fp, fn_));
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("mcc", m.mcc)?;
    Ok(d)
}

/// Writes a synthetic spiral dataset and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, subjects=15, duration=20.0, null_control=false))]
fn synth(out_dir: PathBuf, seed: u64, subjects: usize, duration: f64, null_control: bool) -> PyResult<PathBuf> {
    let mut cfg = SynthConfig {
        seed,
        n_subjects_per_class: subjects,
        duration,
        ..Default::default()
    };
    if null_control {
        cfg = cfg.null_control();
    }
    generate_dataset(&cfg, &out_dir).map_err(py_err)
}

/// LSTM + 1D-CNN classifier weights with their architecture.
#[pyclass(module = "lcnn_py")]
struct Model {
    params: ModelParams,
    cfg: ModelConfig,
}

#[pymethods]
impl Model {
    /// Freshly initialized weights.
    #[new]
    #[pyo3(signature = (seed=0, window=128))]
    fn new(seed: u64, window: usize) -> PyResult<Self> {
        let cfg = ModelConfig::with_window(window);
        let params = init_params(&cfg, &mut Rng::new(seed)).map_err(py_err)?;
        Ok(Self { params, cfg })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, cfg) = load_checkpoint(&path).map_err(py_err)?;
        Ok(Self { params, cfg })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, &self.cfg, &path).map_err(py_err)
    }

    #[getter]
    fn window(&self) -> usize {
        self.cfg.window
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// `(label, p_hc, p_pd)` for each `window x 5` patch.
    fn predict(&self, patches: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<(String, f64, f64)>> {
        let mats = patches
            .iter()
            .map(|p| {
                if p.len() != self.cfg.window || p.iter().any(|r| r.len() != FEATURES) {
                    return Err(PyValueError::new_err(format!(
                        "each patch must be {} x {FEATURES}",
                        self.cfg.window
                    )));
                }
                Matrix::from_rows(p).map_err(py_err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let refs: Vec<&Matrix> = mats.iter().collect();
        let preds = predict_inputs(&refs, &self.params, &self.cfg).map_err(py_err)?;
        Ok(preds
            .into_iter()
            .map(|p| (p.label.as_str().to_string(), p.probs[0], p.probs[1]))
            .collect())
    }

    /// Full load -> preprocess -> predict -> vote with stage timings.
    #[pyo3(signature = (path, alpha=0.5, stride=64, diff_mode="geometric", format=None))]
    fn diagnose<'py>(
        &self,
        py: Python<'py>,
        path: PathBuf,
        alpha: f64,
        stride: usize,
        diff_mode: &str,
        format: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let seg = segmentation(self.cfg.window, stride, diff_mode)?;
        let d = diagnose_sequence(&path, format_for(&path, format)?, &self.params, &self.cfg, &seg, alpha)
            .map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("subject_id", &d.vote.subject_id)?;
        out.set_item("predicted", d.vote.predicted.as_str())?;
        out.set_item("r", d.vote.pd_fraction)?;
        out.set_item("n_patches", d.vote.n_patches)?;
        out.set_item("length", d.sequence_length)?;
        let t = PyDict::new(py);
        t.set_item("loading", d.timings.loading)?;
        t.set_item("processing", d.timings.processing)?;
        t.set_item("model", d.timings.model)?;
        t.set_item("total", d.timings.total)?;
        out.set_item("timings", t)?;
        Ok(out)
    }
}

/// Runs the `lcnn` command line in-process and returns its stdout.
#[pyfunction]
fn run_cli(args: Vec<String>) -> PyResult<String> {
    let mut out = Vec::new();
    let full = std::iter::once("lcnn".to_string()).chain(args);
    lcnn::cli::run(full, &mut out).map_err(py_err)?;
    Ok(String::from_utf8_lossy(&out).into_owned())
}

#[pymodule]
fn lcnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(load_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(count_flops, m)?)?;
    m.add_function(wrap_pyfunction!(complexity_report, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
