//! Python bindings. Spectra are plain lists of floats and classes are
//! 0-based in the model API, 1-based in `summarize` and ground truth.

use std::collections::HashMap;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use casrnn_core::cascade::{self, CascadeConfig, Sample, Variant};
use casrnn_core::cli::{self, RunConfig};
use casrnn_core::data::{self, SynthSpec};
use casrnn_core::metrics::{self, ConfusionMatrix};
use casrnn_core::nn::{Parameterized, SgdConfig};
use casrnn_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::Argument(_) | Error::Shape(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn as_inputs(spectrum: &[f64]) -> Vec<[f64; 1]> {
    spectrum.iter().map(|&v| [v]).collect()
}

/// Zero-based `(start, end)` band ranges of the `l` sub-sequences.
#[pyfunction]
fn partition_bands(bands: usize, groups: usize) -> PyResult<Vec<(usize, usize)>> {
    let p = cascade::partition_bands(bands, groups).map_err(py_err)?;
    Ok(p.ranges().iter().map(|r| (r.start, r.end)).collect())
}

#[pyclass(name = "CascadeModel", module = "casrnn")]
struct PyCascadeModel {
    inner: cascade::CascadeModel,
}

#[pymethods]
impl PyCascadeModel {
    #[new]
    #[pyo3(signature = (bands, classes, l = 10, hidden1 = 128, hidden2 = 256, variant = "cas", seed = 0))]
    fn new(
        bands: usize,
        classes: usize,
        l: usize,
        hidden1: usize,
        hidden2: usize,
        variant: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(py_err)?;
        let config = CascadeConfig {
            bands,
            sub_sequences: l,
            hidden1,
            hidden2,
            classes,
            variant,
            input_dim: 1,
        };
        let inner = cascade::CascadeModel::new(config, &mut cli::init_rng(seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.config().variant.name()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    fn logits(&self, spectrum: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.logits(&as_inputs(&spectrum)).map_err(py_err)
    }

    fn predict(&self, spectrum: Vec<f64>) -> PyResult<usize> {
        self.inner.predict(&as_inputs(&spectrum)).map_err(py_err)
    }

    /// Returns `(mean_loss, train_oa)` per epoch.
    #[pyo3(signature = (spectra, labels, lr = 0.001, batch = 64, epochs = 300, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        spectra: Vec<Vec<f64>>,
        labels: Vec<usize>,
        lr: f64,
        batch: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Vec<(f64, f64)>> {
        if spectra.len() != labels.len() {
            return Err(PyValueError::new_err(format!(
                "{} spectra but {} labels",
                spectra.len(),
                labels.len()
            )));
        }
        let samples: Vec<Sample> = spectra
            .iter()
            .zip(&labels)
            .map(|(s, &y)| Sample::from_spectrum(s, y))
            .collect();
        let sgd = SgdConfig {
            learning_rate: lr,
            batch_size: batch,
            epochs,
            seed,
        };
        let model = &mut self.inner;
        let log = py
            .detach(|| cascade::train_cascade(model, &samples, &sgd))
            .map_err(py_err)?;
        Ok(log.epochs.iter().map(|e| (e.mean_loss, e.train_oa)).collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.to_checkpoint().save(path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = casrnn_core::nn::Checkpoint::load(path).map_err(py_err)?;
        let inner = cascade::CascadeModel::from_checkpoint(&ckpt).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "CascadeModel(variant={:?}, bands={}, l={}, hidden1={}, hidden2={}, classes={})",
            c.variant.name(),
            c.bands,
            c.sub_sequences,
            c.hidden1,
            c.hidden2,
            c.classes
        )
    }
}

/// OA, AA, kappa and per-class accuracy from 1-based label pairs.
#[pyfunction]
fn summarize(py: Python<'_>, truth: Vec<usize>, predicted: Vec<usize>, classes: usize) -> PyResult<Py<PyAny>> {
    if truth.len() != predicted.len() {
        return Err(PyValueError::new_err("truth and predicted differ in length"));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(&predicted) {
        cm.accumulate(t, p).map_err(py_err)?;
    }
    let s = metrics::summarize(&cm).map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("oa", s.oa)?;
    out.set_item("aa", s.aa)?;
    out.set_item("kappa", s.kappa)?;
    out.set_item("per_class", s.per_class)?;
    out.set_item("expected_agreement", s.expected_agreement)?;
    out.set_item("total", s.total)?;
    Ok(out.into_any().unbind())
}

/// Synthetic spectral scene as `(values, labels, (rows, cols, bands))`;
/// `values` is pixel-major, labels are row-major with 1-based classes.
#[pyfunction]
#[pyo3(signature = (classes = 3, bands = 20, rows = 16, cols = 16, redundancy = 4, noise = 0.05, seed = 0))]
#[allow(clippy::type_complexity)]
fn synth(
    classes: usize,
    bands: usize,
    rows: usize,
    cols: usize,
    redundancy: usize,
    noise: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<u16>, (usize, usize, usize))> {
    let spec = SynthSpec {
        classes,
        bands,
        rows,
        cols,
        redundancy,
        noise,
        seed,
    };
    let (cube, gt) = data::synth_hsi(&spec).map_err(py_err)?;
    let cube = data::normalize(&cube);
    Ok((cube.values().to_vec(), gt.labels().to_vec(), (rows, cols, bands)))
}

fn run_config(options: HashMap<String, String>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut entries: Vec<_> = options.into_iter().collect();
    // Variant first so a preset picks the matching optimum, then the preset.
    entries.sort_by_key(|(k, _)| match k.as_str() {
        "variant" => 0,
        "preset" => 1,
        _ => 2,
    });
    for (k, v) in &entries {
        cfg.set(k, v).map_err(py_err)?;
    }
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Runs a CLI subcommand with `key = value` options and returns what it
/// wrote (a metrics dict for `eval`).
#[pyfunction]
#[pyo3(signature = (command, **options))]
fn run(py: Python<'_>, command: &str, options: Option<HashMap<String, Py<PyAny>>>) -> PyResult<Py<PyAny>> {
    let mut text = HashMap::new();
    for (k, v) in options.unwrap_or_default() {
        text.insert(k, v.bind(py).str()?.to_string());
    }
    let cfg = run_config(text)?;
    let out = pyo3::types::PyDict::new(py);
    match command {
        "synth" => {
            let a = py.detach(|| cli::cmd_synth(&cfg)).map_err(py_err)?;
            out.set_item("cube", a.cube.display().to_string())?;
            out.set_item("labels", a.labels.display().to_string())?;
            out.set_item("split", a.split.display().to_string())?;
        }
        "train" => {
            let a = py.detach(|| cli::cmd_train(&cfg)).map_err(py_err)?;
            out.set_item("checkpoint", a.checkpoint.display().to_string())?;
            out.set_item("epochs", a.log.epochs.len())?;
            if let Some(last) = a.log.last() {
                out.set_item("mean_loss", last.mean_loss)?;
                out.set_item("train_oa", last.train_oa)?;
            }
        }
        "eval" => {
            let s = py.detach(|| cli::cmd_eval(&cfg)).map_err(py_err)?;
            out.set_item("oa", s.oa)?;
            out.set_item("aa", s.aa)?;
            out.set_item("kappa", s.kappa)?;
            out.set_item("per_class", s.per_class)?;
        }
        "map" => {
            let p = py.detach(|| cli::cmd_map(&cfg)).map_err(py_err)?;
            out.set_item("map", p.display().to_string())?;
        }
        "sweep" => {
            let rows = py.detach(|| cli::cmd_sweep(&cfg)).map_err(py_err)?;
            let list: Vec<(usize, usize, usize, f64)> =
                rows.iter().map(|r| (r.l, r.hidden1, r.hidden2, r.summary.oa)).collect();
            out.set_item("rows", list)?;
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown command {other:?} (expected synth, train, eval, map or sweep)"
            )))
        }
    }
    Ok(out.into_any().unbind())
}

#[pymodule]
fn casrnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCascadeModel>()?;
    m.add_function(wrap_pyfunction!(partition_bands, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("VARIANTS", Variant::ALL.map(Variant::name).to_vec())?;
    Ok(())
}
