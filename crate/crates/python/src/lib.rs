//! Python bindings: the authenticator (enroll, train, authenticate), the
//! metric and fusion helpers, and the synthetic evaluation harness.
//!
//! Failures raise `bimodal.BimodalError(code, message)`.

use std::collections::HashMap;
use std::path::PathBuf;

use bimodal_core::authenticator::{AuthError, Authenticator, Gallery};
use bimodal_core::config::Config;
use bimodal_core::evaluation::{self, ConfusionMatrix, CorpusLayout, EvaluationReport, MetricsReport, ModalityReport};
use bimodal_core::face_pipeline::EyePair;
use bimodal_core::fusion::{fuse_pair, normalize_double_sigmoid, FusionParams};
use bimodal_core::profile_store::{ProfileStore, StoreError};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

create_exception!(bimodal, BimodalError, PyException);

fn err(code: &str, message: impl ToString) -> PyErr {
    BimodalError::new_err((code.to_owned(), message.to_string()))
}

fn auth_err(e: AuthError) -> PyErr {
    err(e.code(), e)
}

fn store_err(e: StoreError) -> PyErr {
    err(e.code(), e)
}

type Eyes = (f64, f64, f64, f64);

fn eye_pair(e: Option<Eyes>) -> Option<EyePair> {
    e.map(|(lx, ly, rx, ry)| EyePair::new((lx, ly), (rx, ry)))
}

fn open_store(path: &PathBuf, create: bool) -> PyResult<ProfileStore> {
    match ProfileStore::open(path) {
        Err(StoreError::NotInitialized(_)) if create => ProfileStore::init(path).map_err(store_err),
        other => other.map_err(store_err),
    }
}

fn build_config(path: Option<PathBuf>, overrides: Option<HashMap<String, String>>) -> PyResult<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p),
        None => Config::from_env(),
    }
    .map_err(|e| err("config-error", e))?;
    for (k, v) in overrides.unwrap_or_default() {
        let (section, key) = k
            .split_once('.')
            .ok_or_else(|| err("config-error", format!("override key {k:?} must be section.key")))?;
        cfg.set(section, key, &v).map_err(|e| err("config-error", e))?;
    }
    cfg.validate().map_err(|e| err("config-error", e))?;
    Ok(cfg)
}

#[pyclass(name = "Authenticator", frozen)]
struct PyAuthenticator {
    inner: Authenticator,
}

#[pymethods]
impl PyAuthenticator {
    /// `config` is an INI file path; `overrides` maps `section.key` to a value.
    #[new]
    #[pyo3(signature = (config=None, overrides=None))]
    fn new(config: Option<PathBuf>, overrides: Option<HashMap<String, String>>) -> PyResult<Self> {
        let cfg = build_config(config, overrides)?;
        Ok(Self {
            inner: Authenticator::new(cfg).map_err(auth_err)?,
        })
    }

    /// Registers a user, retraining afterwards when `service.auto_train` is set. `faces` holds `(pgm_bytes, eyes)` pairs where eyes is
    /// `(lx, ly, rx, ry)` or None. Returns the rejected samples as
    /// `(modality, index, reason)` tuples.
    fn enroll(
        &self,
        store: PathBuf,
        user_id: &str,
        faces: Vec<(Bound<'_, PyBytes>, Option<Eyes>)>,
        voices: Vec<Bound<'_, PyBytes>>,
    ) -> PyResult<Vec<(String, usize, String)>> {
        let store = open_store(&store, true)?;
        if store.contains(user_id) {
            return Err(auth_err(AuthError::UserExists(user_id.to_owned())));
        }
        let faces: Vec<(Vec<u8>, Option<EyePair>)> =
            faces.iter().map(|(b, e)| (b.as_bytes().to_vec(), eye_pair(*e))).collect();
        let voices: Vec<Vec<u8>> = voices.iter().map(|b| b.as_bytes().to_vec()).collect();
        let (profile, rejected) = self.inner.build_profile(user_id, &faces, &voices).map_err(auth_err)?;
        store.save_profile(&profile, false).map_err(store_err)?;
        if self.inner.config().service.auto_train {
            self.inner.train_store(&store).map_err(auth_err)?;
        }
        Ok(rejected
            .into_iter()
            .map(|r| (r.modality.to_string(), r.index, r.reason))
            .collect())
    }

    /// Retrains the eigenmodel; returns its SHA-256.
    fn train_model(&self, store: PathBuf) -> PyResult<String> {
        let store = open_store(&store, false)?;
        self.inner.train_store(&store).map(|(_, h)| h).map_err(auth_err)
    }

    #[pyo3(signature = (store, face, voice, eyes=None, claimed_user=None))]
    fn authenticate<'py>(
        &self,
        py: Python<'py>,
        store: PathBuf,
        face: &[u8],
        voice: &[u8],
        eyes: Option<Eyes>,
        claimed_user: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let store = open_store(&store, false)?;
        let gallery = Gallery::from_store(&store).map_err(auth_err)?;
        let face = self
            .inner
            .prepare_face(face, eye_pair(eyes), "probe")
            .map_err(|r| err("invalid-sample", format!("face: {}", r.code())))?;
        let voice = self
            .inner
            .prepare_voice(voice)
            .map_err(|r| err("invalid-sample", format!("voice: {r}")))?;
        let out = self
            .inner
            .authenticate(&gallery, &face, &voice, claimed_user)
            .map_err(auth_err)?;
        let d = PyDict::new(py);
        d.set_item("decision", if out.accept { "accept" } else { "reject" })?;
        d.set_item("matched_user", out.matched_user)?;
        d.set_item("face_score", out.face_score)?;
        d.set_item("voice_score", out.voice_score)?;
        d.set_item("fused_score", out.fused_score)?;
        Ok(d)
    }

    /// MFCC frames of a WAV recording.
    fn mfcc(&self, wav: &[u8]) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .prepare_voice(wav)
            .map(|s| s.frames)
            .map_err(|r| err("invalid-sample", r))
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, v) in MetricsReport::NAMES.iter().zip(m.values()) {
        d.set_item(*name, v)?;
    }
    Ok(d)
}

/// Six percentages from a confusion matrix; None where undefined.
#[pyfunction]
#[pyo3(name = "compute_metrics")]
fn py_compute_metrics(py: Python<'_>, tn: u64, fp: u64, fn_: u64, tp: u64) -> PyResult<Bound<'_, PyDict>> {
    metrics_dict(py, &evaluation::compute_metrics(&ConfusionMatrix::new(tn, fp, fn_, tp)))
}

/// Double-sigmoid normalization with the default parameters of `modality`.
#[pyfunction]
fn normalize(score: f64, modality: &str) -> PyResult<f64> {
    let p = FusionParams::default();
    let params = match modality {
        "face" => p.face,
        "voice" => p.voice,
        other => return Err(err("invalid-argument", format!("unknown modality {other:?}"))),
    };
    normalize_double_sigmoid(score, &params).map_err(|e| err("invalid-argument", e))
}

/// Fused decision for one face and one voice distance under default parameters.
#[pyfunction]
fn fuse(py: Python<'_>, face_distance: f64, voice_distance: f64) -> PyResult<Bound<'_, PyDict>> {
    let dec = fuse_pair(face_distance, voice_distance, &FusionParams::default()).map_err(|e| err("invalid-argument", e))?;
    let d = PyDict::new(py);
    d.set_item("fused_score", dec.fused)?;
    d.set_item("accept", dec.accept)?;
    for s in &dec.scores {
        d.set_item(format!("{}_normalized", s.modality), s.normalized)?;
    }
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (root, seed=7, subjects=12, samples=16))]
fn generate_corpus(root: PathBuf, seed: u64, subjects: usize, samples: usize) -> PyResult<(String, String)> {
    let l = evaluation::generate_synthetic_corpus(&root, seed, subjects, samples).map_err(|e| err("invalid-argument", e))?;
    Ok((l.faces.display().to_string(), l.voices.display().to_string()))
}

fn modality_dict<'py>(py: Python<'py>, m: &ModalityReport) -> PyResult<Bound<'py, PyDict>> {
    let d = metrics_dict(py, &m.metrics)?;
    let c = m.confusion;
    d.set_item("confusion", (c.tn, c.fp, c.fn_, c.tp))?;
    d.set_item("identity_confusions", m.identity_confusions)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &EvaluationReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seed", r.seed)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("face", modality_dict(py, &r.face)?)?;
    d.set_item("voice", modality_dict(py, &r.voice)?)?;
    d.set_item("ensemble", modality_dict(py, &r.ensemble)?)?;
    d.set_item("exclusions", r.exclusions)?;
    Ok(d)
}

/// Runs the evaluation protocol on a corpus root holding `faces/` and `voices/`.
#[pyfunction]
#[pyo3(signature = (corpus, iterations=5, seed=7, config=None, overrides=None))]
fn evaluate(
    py: Python<'_>,
    corpus: PathBuf,
    iterations: usize,
    seed: u64,
    config: Option<PathBuf>,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<Bound<'_, PyDict>> {
    let mut cfg = build_config(config, overrides)?;
    cfg.evaluation.iterations = iterations;
    cfg.evaluation.seed = seed;
    let ecfg = cfg.evaluation.clone();
    let auth = Authenticator::new(cfg).map_err(auth_err)?;
    let (_, report) =
        evaluation::evaluate_corpus(&CorpusLayout::under(&corpus), &auth, &ecfg).map_err(|e| err("evaluation-error", e))?;
    report_dict(py, &report)
}

#[pymodule]
fn bimodal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BimodalError", m.py().get_type::<BimodalError>())?;
    m.add_class::<PyAuthenticator>()?;
    m.add_function(wrap_pyfunction!(py_compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
