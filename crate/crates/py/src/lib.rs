//! Python bindings: banding helpers, segmentation and a `Pipeline` class
//! that runs the same operations as the `discourse` CLI. Structured results
//! are returned as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde_json::Value;

use discourse_core::classify::{self, BandConfig, IntensityBand};
use discourse_core::config::Config;
use discourse_core::corpus;
use discourse_core::metrics::Selector;
use discourse_core::pipeline;
use discourse_core::prompting::AnnotationTask;
use discourse_core::store::{SpeechFilter, Store};
use discourse_core::vizdata::{ChartKind, ChartOptions};
use discourse_core::Error;

create_exception!(discourse, DiscourseError, PyException, "Base class; args are (code, message, details).");
create_exception!(discourse, NotFoundError, DiscourseError);
create_exception!(discourse, ValidationError, DiscourseError);
create_exception!(discourse, ConflictError, DiscourseError);

fn to_py_err(e: Error) -> PyErr {
    let env = e.envelope();
    let args = (env.code.clone(), env.message, env.details.to_string());
    match env.code.as_str() {
        "not_found" => NotFoundError::new_err(args),
        "validation" | "schema_version" => ValidationError::new_err(args),
        "conflict" | "finalization_incomplete" => ConflictError::new_err(args),
        _ => DiscourseError::new_err(args),
    }
}

fn validation(message: impl Into<String>) -> PyErr {
    to_py_err(Error::Validation(message.into()))
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| DiscourseError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_option<T: serde::de::DeserializeOwned>(name: &str, value: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(value.to_string())).map_err(|e| validation(format!("{name}: {e}")))
}

fn parse_selector(s: &str) -> PyResult<Selector> {
    s.parse().map_err(|e| to_py_err(Error::Metrics(e)))
}

/// Sentiment band of a score in [-1, 1], after rounding to cents.
#[pyfunction]
fn sentiment_band(score: f64) -> PyResult<&'static str> {
    classify::sentiment_band(score).map(|b| b.as_str()).map_err(|e| to_py_err(e.into()))
}

/// Intensity band of a polarization or populism score in [0, 1].
#[pyfunction]
fn intensity_band(score: f64) -> PyResult<&'static str> {
    classify::intensity_band(score).map(|b| b.as_str()).map_err(|e| to_py_err(e.into()))
}

/// The score a reviewer's corrected intensity band stands for.
#[pyfunction]
fn corrective_value(band: &str) -> PyResult<f64> {
    let band: IntensityBand = band.parse().map_err(|e| to_py_err(Error::Band(e)))?;
    Ok(classify::corrective_value(band))
}

/// Band thresholds as chart zones: `{"sentiment": [...], "intensity": [...]}`.
#[pyfunction]
fn zones(py: Python<'_>) -> PyResult<Py<PyAny>> {
    let bands = BandConfig::default();
    let value = serde_json::json!({ "sentiment": bands.sentiment_zones(), "intensity": bands.intensity_zones() });
    to_py(py, &value)
}

/// Splits a speech body into paragraphs.
#[pyfunction]
fn segment(text: &str) -> PyResult<Vec<String>> {
    corpus::segment(text).map_err(|e| to_py_err(e.into()))
}

#[pyfunction]
fn word_count(text: &str) -> usize {
    corpus::word_count(text)
}

/// A pipeline configured from an optional TOML file. `store` overrides the
/// configured store directory; `":memory:"`, or giving neither argument,
/// keeps everything in memory.
#[pyclass(module = "discourse", frozen)]
struct Pipeline {
    inner: Arc<pipeline::Pipeline>,
}

impl Pipeline {
    fn run<T: Send>(
        &self,
        py: Python<'_>,
        f: impl FnOnce(&pipeline::Pipeline) -> discourse_core::Result<T> + Send,
    ) -> PyResult<T> {
        let p = self.inner.clone();
        py.detach(move || f(&p)).map_err(to_py_err)
    }
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (config=None, store=None))]
    fn new(config: Option<PathBuf>, store: Option<String>) -> PyResult<Self> {
        let mut cfg = match &config {
            Some(path) => Config::load(path).map_err(to_py_err)?,
            None => Config::default(),
        };
        let in_memory = match store {
            Some(s) if s == ":memory:" => true,
            Some(dir) => {
                cfg.store.path = PathBuf::from(dir);
                false
            }
            None => config.is_none(),
        };
        let inner = if in_memory {
            pipeline::Pipeline::with_store(cfg, Store::in_memory())
        } else {
            pipeline::Pipeline::open(cfg)
        };
        Ok(Self { inner: Arc::new(inner.map_err(to_py_err)?) })
    }

    /// Ingests a corpus directory.
    fn ingest(&self, py: Python<'_>, dir: PathBuf) -> PyResult<Py<PyAny>> {
        let report = self.run(py, move |p| p.ingest_dir(&dir))?;
        to_py(py, &report)
    }

    /// Speech ids in date order.
    fn speeches(&self) -> Vec<String> {
        let filter = SpeechFilter::default();
        self.inner.store().list_speeches(&filter).into_iter().map(|s| s.id).collect()
    }

    fn speech(&self, py: Python<'_>, speech_id: &str) -> PyResult<Py<PyAny>> {
        let speech = self.inner.store().get_speech(speech_id).map_err(to_py_err)?;
        to_py(py, &speech)
    }

    #[pyo3(signature = (speech_id, provider="identity"))]
    fn translate(&self, py: Python<'_>, speech_id: String, provider: &str) -> PyResult<Py<PyAny>> {
        let provider = provider.to_string();
        let job = self.run(py, move |p| p.translate(&speech_id, &provider))?;
        to_py(py, &job)
    }

    /// Runs an annotate job; `tasks` is a comma-separated list or `all`.
    #[pyo3(signature = (speech_id, tasks="all", provider="stub"))]
    fn annotate(&self, py: Python<'_>, speech_id: String, tasks: &str, provider: &str) -> PyResult<Py<PyAny>> {
        let tasks = AnnotationTask::parse_list(tasks).map_err(validation)?;
        let provider = provider.to_string();
        let job = self.run(py, move |p| p.annotate(&speech_id, &tasks, &provider))?;
        to_py(py, &job)
    }

    /// Applies a JSONL file of review decisions.
    fn apply_decisions(&self, py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
        let report = self.run(py, move |p| p.apply_decisions_file(&path))?;
        to_py(py, &report)
    }

    fn review_status(&self, py: Python<'_>, speech_id: String) -> PyResult<Py<PyAny>> {
        let status = self.run(py, move |p| p.review_status(&speech_id))?;
        to_py(py, &status)
    }

    /// Freezes a speech's reviewed annotations; returns the validated set.
    fn finalize(&self, py: Python<'_>, speech_id: String) -> PyResult<Py<PyAny>> {
        let set = self.run(py, move |p| p.finalize(&speech_id))?;
        to_py(py, &set)
    }

    #[pyo3(signature = (selector="all"))]
    fn accuracy(&self, py: Python<'_>, selector: &str) -> PyResult<Py<PyAny>> {
        let sel = parse_selector(selector)?;
        let report = self.run(py, move |p| p.accuracy(&sel))?;
        to_py(py, &report)
    }

    /// The accuracy report in its CSV form.
    #[pyo3(signature = (selector="all"))]
    fn accuracy_csv(&self, py: Python<'_>, selector: &str) -> PyResult<String> {
        let sel = parse_selector(selector)?;
        Ok(self.run(py, move |p| p.accuracy(&sel))?.to_csv())
    }

    #[pyo3(signature = (selector="all"))]
    fn summary(&self, py: Python<'_>, selector: &str) -> PyResult<Py<PyAny>> {
        let sel = parse_selector(selector)?;
        let summary = self.run(py, move |p| p.summary(&sel))?;
        to_py(py, &summary)
    }

    /// Chart data for one of the seven chart kinds.
    #[pyo3(signature = (kind, selector="all", topic_scope=None, intensity_weighting=None))]
    fn chart(
        &self,
        py: Python<'_>,
        kind: &str,
        selector: &str,
        topic_scope: Option<&str>,
        intensity_weighting: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let kind: ChartKind = kind.parse().map_err(|e| to_py_err(Error::Viz(e)))?;
        let sel = parse_selector(selector)?;
        let mut options = ChartOptions::default();
        if let Some(v) = topic_scope {
            options.topic_scope = parse_option("topic_scope", v)?;
        }
        if let Some(v) = intensity_weighting {
            options.intensity_weighting = parse_option("intensity_weighting", v)?;
        }
        let chart = self.run(py, move |p| p.chart(kind, &sel, options))?;
        to_py(py, &chart)
    }

    /// Exports the store as a bundle directory.
    fn export_bundle(&self, py: Python<'_>, dir: PathBuf) -> PyResult<Py<PyAny>> {
        let info = self.run(py, move |p| p.store().export_bundle(&dir))?;
        to_py(py, &info)
    }
}

#[pymodule]
fn discourse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMA_VERSION", discourse_core::SCHEMA_VERSION)?;
    m.add("DiscourseError", m.py().get_type::<DiscourseError>())?;
    m.add("NotFoundError", m.py().get_type::<NotFoundError>())?;
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    m.add("ConflictError", m.py().get_type::<ConflictError>())?;
    m.add_function(wrap_pyfunction!(sentiment_band, m)?)?;
    m.add_function(wrap_pyfunction!(intensity_band, m)?)?;
    m.add_function(wrap_pyfunction!(corrective_value, m)?)?;
    m.add_function(wrap_pyfunction!(zones, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(word_count, m)?)?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
