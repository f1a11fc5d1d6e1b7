//! Python bindings: schemes, rendering, image metrics, CTC decoding and
//! recognition scoring.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use capsynth::active::evaluate_predictions;
use capsynth::ctc::{beam_decode, greedy_decode, log_likelihood, LogitsMatrix};
use capsynth::dataset::{decode_png, encode_png};
use capsynth::metrics::{self, to_gray};
use capsynth::render::{generate_dataset, render_captcha};
use capsynth::scheme::{named_scheme, SchemeConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A CAPTCHA scheme configuration.
#[pyclass(name = "Scheme", module = "capsynth", frozen)]
struct PyScheme {
    cfg: SchemeConfig,
}

#[pymethods]
impl PyScheme {
    /// Built-in scheme: `weibo`, `1`..`12` or `preset-NN`.
    #[staticmethod]
    fn named(name: &str) -> PyResult<Self> {
        named_scheme(name).map(|cfg| Self { cfg }).map_err(value_err)
    }

    #[staticmethod]
    fn from_json(doc: &str) -> PyResult<Self> {
        SchemeConfig::from_json(doc).map(|cfg| Self { cfg }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.cfg.to_json()
    }

    #[getter]
    fn scheme_id(&self) -> String {
        self.cfg.scheme_id.clone()
    }

    #[getter]
    fn image_size(&self) -> (u32, u32) {
        self.cfg.image_size
    }

    /// Enabled mechanism names in column order.
    #[getter]
    fn mechanisms(&self) -> Vec<&'static str> {
        self.cfg.mechanisms().iter().map(|m| m.name()).collect()
    }

    #[getter]
    fn charset(&self) -> String {
        self.cfg.effective_charset().into_iter().collect()
    }

    fn digest(&self) -> String {
        self.cfg.digest()
    }

    /// Renders one image; `text` defaults to a label drawn from the seed.
    #[pyo3(signature = (seed, text=None))]
    fn render(&self, seed: u64, text: Option<&str>) -> PyResult<Sample> {
        let s = render_captcha(&self.cfg, seed, text).map_err(value_err)?;
        Ok(Sample {
            label: s.label,
            seed,
            width: s.image.width(),
            height: s.image.height(),
            png: encode_png(&s.image),
        })
    }

    /// Writes a labeled dataset to `out_root/dataset_id`; returns the
    /// manifest path.
    fn generate(&self, count: usize, seed: u64, out_root: PathBuf, dataset_id: &str) -> PyResult<String> {
        std::fs::create_dir_all(&out_root).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let m = generate_dataset(&self.cfg, count, seed, &out_root, dataset_id).map_err(value_err)?;
        Ok(m.manifest_path().to_string_lossy().into_owned())
    }

    fn __repr__(&self) -> String {
        format!("Scheme({:?})", self.cfg.scheme_id)
    }
}

/// A rendered image with its label.
#[pyclass(module = "capsynth", frozen, get_all)]
struct Sample {
    label: String,
    seed: u64,
    width: u32,
    height: u32,
    png: Vec<u8>,
}

#[pymethods]
impl Sample {
    /// PNG-encoded RGB image.
    fn png_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.png)
    }

    fn __repr__(&self) -> String {
        format!("Sample(label={:?}, {}x{})", self.label, self.width, self.height)
    }
}

/// Scheme ids of the built-in presets.
#[pyfunction]
fn presets() -> Vec<String> {
    let mut out: Vec<String> = (1..=12)
        .map(|n| named_scheme(&n.to_string()).expect("preset exists").scheme_id)
        .collect();
    out.push("weibo".into());
    out
}

fn gray(png: &[u8]) -> PyResult<image::GrayImage> {
    decode_png(png).map(|img| to_gray(&img)).map_err(value_err)
}

#[pyfunction]
fn ssim(a: &[u8], b: &[u8]) -> PyResult<f64> {
    metrics::ssim(&gray(a)?, &gray(b)?).map_err(value_err)
}

#[pyfunction]
fn psnr(a: &[u8], b: &[u8]) -> PyResult<f64> {
    metrics::psnr(&gray(a)?, &gray(b)?).map_err(value_err)
}

/// Root-mean-square error over the reference's intensity range.
#[pyfunction]
fn nrmse(a: &[u8], reference: &[u8]) -> PyResult<f64> {
    metrics::nrmse(&gray(a)?, &gray(reference)?).map_err(value_err)
}

#[pyfunction]
fn entropy(a: &[u8]) -> PyResult<f64> {
    Ok(metrics::entropy(&gray(a)?))
}

#[pyfunction]
fn mutual_information(a: &[u8], b: &[u8]) -> PyResult<f64> {
    metrics::mutual_information(&gray(a)?, &gray(b)?).map_err(value_err)
}

#[pyfunction]
fn perceptual_distance(a: &[u8], b: &[u8]) -> PyResult<f64> {
    metrics::perceptual_distance(&gray(a)?, &gray(b)?).map_err(value_err)
}

/// Per-frame CTC outputs over `alphabet` plus a trailing blank class.
#[pyclass(name = "Logits", module = "capsynth", frozen)]
struct PyLogits {
    m: LogitsMatrix,
}

#[pymethods]
impl PyLogits {
    /// From log-probability rows; each frame must sum to 1.
    #[new]
    fn new(alphabet: &str, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        LogitsMatrix::new(alphabet, rows).map(|m| Self { m }).map_err(value_err)
    }

    #[staticmethod]
    fn from_probabilities(alphabet: &str, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        LogitsMatrix::from_probabilities(alphabet, rows)
            .map(|m| Self { m })
            .map_err(value_err)
    }

    /// From unnormalized scores; a log-softmax is applied per frame.
    #[staticmethod]
    fn from_scores(alphabet: &str, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        LogitsMatrix::from_scores(alphabet, rows).map(|m| Self { m }).map_err(value_err)
    }

    #[getter]
    fn frames(&self) -> usize {
        self.m.frames()
    }

    /// Best-path decode; returns `(label, log score)`.
    fn greedy(&self) -> (String, f64) {
        let r = greedy_decode(&self.m);
        (r.label, r.score)
    }

    /// Prefix beam search; returns `(label, log probability)`.
    #[pyo3(signature = (width=10))]
    fn beam(&self, width: usize) -> PyResult<(String, f64)> {
        if width == 0 {
            return Err(PyValueError::new_err("beam width must be positive"));
        }
        let r = beam_decode(&self.m, width);
        Ok((r.label, r.score))
    }

    /// Log probability of `text` summed over all alignments.
    fn log_likelihood(&self, text: &str) -> PyResult<f64> {
        log_likelihood(&self.m, text).map_err(value_err)
    }
}

/// Scores predictions against ground truth. Returns the exact-match rate
/// and `(char, misrecognized, exposure, rate)` rows for `charset`, worst
/// first.
#[pyfunction]
#[pyo3(signature = (predictions, truths, charset, min_exposure=5))]
fn evaluate(
    predictions: Vec<String>,
    truths: Vec<String>,
    charset: &str,
    min_exposure: u64,
) -> PyResult<(f64, Vec<(char, u64, u64, f64)>)> {
    let e = evaluate_predictions(&predictions, &truths).map_err(value_err)?;
    let rows = e
        .stats
        .ranked(charset, min_exposure)
        .into_iter()
        .map(|r| (r.ch, r.misrecognized, r.exposure, r.rate))
        .collect();
    Ok((e.success_rate, rows))
}

#[pymodule]
#[pyo3(name = "capsynth")]
fn capsynth_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyScheme>()?;
    m.add_class::<Sample>()?;
    m.add_class::<PyLogits>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(perceptual_distance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
