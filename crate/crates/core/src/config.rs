//! Tunables for every stage, read from a bracketed-section `key = value` file.
//!
//! Any key may be omitted; missing keys keep their defaults. The file path can
//! come from the `BIMODAL_CONFIG` environment variable.

use std::path::{Path, PathBuf};

use ini::Ini;
use thiserror::Error;

use crate::eigenfaces::{EnrollmentRange, DEFAULT_FACE_THRESHOLD};
use crate::face_pipeline::FaceGeometry;
use crate::fusion::FusionParams;
use crate::speech_features::MfccConfig;
use crate::vq_model::{DEFAULT_CODEBOOK_SIZE, DEFAULT_VOICE_THRESHOLD};

pub const CONFIG_ENV: &str = "BIMODAL_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config key [{section}] {key}: cannot parse {value:?}")]
    Value { section: String, key: String, value: String },
    #[error("unknown config key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceConfig {
    /// Images wider than this are scaled down before face detection.
    pub scaling_width: usize,
    pub threshold: f64,
    pub face_cascade: Option<PathBuf>,
    pub eye_cascade: Option<PathBuf>,
    pub geometry: FaceGeometry,
    pub enrollment: EnrollmentRange,
    /// Samples whose mean intensity falls below this are rejected as too dark.
    pub dark_mean: f64,
}

impl Default for FaceConfig {
    fn default() -> Self {
        Self {
            scaling_width: 320,
            threshold: DEFAULT_FACE_THRESHOLD,
            face_cascade: None,
            eye_cascade: None,
            geometry: FaceGeometry::default(),
            enrollment: EnrollmentRange::default(),
            dark_mean: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceConfig {
    pub mfcc: MfccConfig,
    pub codebook_size: usize,
    pub threshold: f64,
    pub enrollment: EnrollmentRange,
}

impl Default for VoiceConfig {
    fn default() -> Self {
        Self {
            mfcc: MfccConfig::default(),
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            threshold: DEFAULT_VOICE_THRESHOLD,
            enrollment: EnrollmentRange { min: 5, max: 7 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen_addr: String,
    pub store_path: PathBuf,
    pub max_envelope_bytes: usize,
    /// Retrain the eigenmodel after every successful registration.
    pub auto_train: bool,
}

pub const MAX_ENVELOPE_BYTES: usize = 64 * 1024 * 1024;

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:7878".into(),
            store_path: PathBuf::from("store"),
            max_envelope_bytes: MAX_ENVELOPE_BYTES,
            auto_train: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub seed: u64,
    pub iterations: usize,
    pub registered_fraction: f64,
    pub face_train: EnrollmentRange,
    pub face_test: usize,
    pub voice_train: EnrollmentRange,
    pub voice_test: usize,
    /// Subjects with fewer valid face samples are dropped from the index.
    pub min_face_samples: usize,
    /// Refuse to clamp train counts below the configured ranges.
    pub strict: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            iterations: 100,
            registered_fraction: 0.5,
            face_train: EnrollmentRange { min: 20, max: 30 },
            face_test: 10,
            voice_train: EnrollmentRange { min: 5, max: 7 },
            voice_test: 2,
            min_face_samples: 10,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub face: FaceConfig,
    pub voice: VoiceConfig,
    pub fusion: FusionParams,
    pub service: ServiceConfig,
    pub evaluation: EvaluationConfig,
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Value {
        section: section.into(),
        key: key.into(),
        value: value.into(),
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value {
            section: section.into(),
            key: key.into(),
            value: value.into(),
        }),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl Config {
    pub fn from_ini_str(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Read {
            path: PathBuf::from("<string>"),
            message: e.to_string(),
        })?;
        let mut c = Config::default();
        for (section, props) in ini.iter() {
            let sec = section.unwrap_or("");
            for (key, value) in props.iter() {
                c.set(sec, key, value)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_ini_str(&text)
    }

    /// Loads the file named by `BIMODAL_CONFIG` if set, else the defaults.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(PathBuf::from(p)),
            _ => Ok(Self::default()),
        }
    }

    /// Sets one key; used by the file loader and by command-line overrides.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let s = section;
        match (section, key) {
            ("face", "scaling_width") => self.face.scaling_width = parse(s, key, value)?,
            ("face", "threshold") => self.face.threshold = parse(s, key, value)?,
            ("face", "face_cascade") => self.face.face_cascade = optional_path(value),
            ("face", "eye_cascade") => self.face.eye_cascade = optional_path(value),
            ("face", "left_eye_x") => self.face.geometry.left_eye_x = parse(s, key, value)?,
            ("face", "right_eye_x") => self.face.geometry.right_eye_x = parse(s, key, value)?,
            ("face", "eye_y") => self.face.geometry.eye_y = parse(s, key, value)?,
            ("face", "enroll_min") => self.face.enrollment.min = parse(s, key, value)?,
            ("face", "enroll_max") => self.face.enrollment.max = parse(s, key, value)?,
            ("face", "dark_mean") => self.face.dark_mean = parse(s, key, value)?,
            ("voice", "sample_rate") => self.voice.mfcc.sample_rate = parse(s, key, value)?,
            ("voice", "frame_len") => self.voice.mfcc.frame_len = parse(s, key, value)?,
            ("voice", "overlap") => self.voice.mfcc.overlap = parse(s, key, value)?,
            ("voice", "window_phi") => self.voice.mfcc.window_phi = parse(s, key, value)?,
            ("voice", "filters") => self.voice.mfcc.filters = parse(s, key, value)?,
            ("voice", "coefficients") => self.voice.mfcc.coefficients = parse(s, key, value)?,
            ("voice", "pre_emphasis") => {
                self.voice.mfcc.pre_emphasis = match value.trim() {
                    "" | "off" | "none" => None,
                    v => Some(parse(s, key, v)?),
                }
            }
            ("voice", "codebook_size") => self.voice.codebook_size = parse(s, key, value)?,
            ("voice", "threshold") => self.voice.threshold = parse(s, key, value)?,
            ("voice", "enroll_min") => self.voice.enrollment.min = parse(s, key, value)?,
            ("voice", "enroll_max") => self.voice.enrollment.max = parse(s, key, value)?,
            ("fusion", "face_tau") => self.fusion.face.tau = parse(s, key, value)?,
            ("fusion", "face_alpha1") => self.fusion.face.alpha1 = parse(s, key, value)?,
            ("fusion", "face_alpha2") => self.fusion.face.alpha2 = parse(s, key, value)?,
            ("fusion", "face_weight") => self.fusion.face.weight = parse(s, key, value)?,
            ("fusion", "voice_tau") => self.fusion.voice.tau = parse(s, key, value)?,
            ("fusion", "voice_alpha1") => self.fusion.voice.alpha1 = parse(s, key, value)?,
            ("fusion", "voice_alpha2") => self.fusion.voice.alpha2 = parse(s, key, value)?,
            ("fusion", "voice_weight") => self.fusion.voice.weight = parse(s, key, value)?,
            ("fusion", "accept_threshold") => self.fusion.accept_threshold = parse(s, key, value)?,
            ("service", "listen_addr") => self.service.listen_addr = value.trim().to_owned(),
            ("service", "store_path") => self.service.store_path = PathBuf::from(value.trim()),
            ("service", "max_envelope_bytes") => self.service.max_envelope_bytes = parse(s, key, value)?,
            ("service", "auto_train") => self.service.auto_train = parse_bool(s, key, value)?,
            ("evaluation", "seed") => self.evaluation.seed = parse(s, key, value)?,
            ("evaluation", "iterations") => self.evaluation.iterations = parse(s, key, value)?,
            ("evaluation", "registered_fraction") => self.evaluation.registered_fraction = parse(s, key, value)?,
            ("evaluation", "face_train_min") => self.evaluation.face_train.min = parse(s, key, value)?,
            ("evaluation", "face_train_max") => self.evaluation.face_train.max = parse(s, key, value)?,
            ("evaluation", "face_test") => self.evaluation.face_test = parse(s, key, value)?,
            ("evaluation", "voice_train_min") => self.evaluation.voice_train.min = parse(s, key, value)?,
            ("evaluation", "voice_train_max") => self.evaluation.voice_train.max = parse(s, key, value)?,
            ("evaluation", "voice_test") => self.evaluation.voice_test = parse(s, key, value)?,
            ("evaluation", "min_face_samples") => self.evaluation.min_face_samples = parse(s, key, value)?,
            ("evaluation", "strict") => self.evaluation.strict = parse_bool(s, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    section: section.into(),
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fusion.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let checks = [
            (self.face.scaling_width > 0, "face.scaling_width must be positive"),
            (self.face.enrollment.min <= self.face.enrollment.max, "face enrollment range is empty"),
            (self.voice.enrollment.min <= self.voice.enrollment.max, "voice enrollment range is empty"),
            (
                self.voice.codebook_size.is_power_of_two(),
                "voice.codebook_size must be a power of two",
            ),
            (self.voice.mfcc.sample_rate > 0, "voice.sample_rate must be positive"),
            (
                self.evaluation.registered_fraction > 0.0 && self.evaluation.registered_fraction <= 1.0,
                "evaluation.registered_fraction must lie in (0, 1]",
            ),
            (self.evaluation.face_test > 0 && self.evaluation.voice_test > 0, "test counts must be positive"),
            (
                self.service.max_envelope_bytes > 0 && self.service.max_envelope_bytes <= u32::MAX as usize,
                "service.max_envelope_bytes out of range",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(ConfigError::Invalid(msg.into()));
            }
        }
        Ok(())
    }

    /// Renders every key with its current value.
    pub fn to_ini_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let f = &self.face;
        let v = &self.voice;
        let u = &self.fusion;
        let s = &self.service;
        let e = &self.evaluation;
        format!(
            "[face]\nscaling_width = {}\nthreshold = {}\nface_cascade = {}\neye_cascade = {}\nleft_eye_x = {}\nright_eye_x = {}\neye_y = {}\nenroll_min = {}\nenroll_max = {}\ndark_mean = {}\n\n\
             [voice]\nsample_rate = {}\nframe_len = {}\noverlap = {}\nwindow_phi = {}\nfilters = {}\ncoefficients = {}\npre_emphasis = {}\ncodebook_size = {}\nthreshold = {}\nenroll_min = {}\nenroll_max = {}\n\n\
             [fusion]\nface_tau = {}\nface_alpha1 = {}\nface_alpha2 = {}\nface_weight = {}\nvoice_tau = {}\nvoice_alpha1 = {}\nvoice_alpha2 = {}\nvoice_weight = {}\naccept_threshold = {}\n\n\
             [service]\nlisten_addr = {}\nstore_path = {}\nmax_envelope_bytes = {}\nauto_train = {}\n\n\
             [evaluation]\nseed = {}\niterations = {}\nregistered_fraction = {}\nface_train_min = {}\nface_train_max = {}\nface_test = {}\nvoice_train_min = {}\nvoice_train_max = {}\nvoice_test = {}\nmin_face_samples = {}\nstrict = {}\n",
            f.scaling_width, f.threshold, path(&f.face_cascade), path(&f.eye_cascade),
            f.geometry.left_eye_x, f.geometry.right_eye_x, f.geometry.eye_y,
            f.enrollment.min, f.enrollment.max, f.dark_mean,
            v.mfcc.sample_rate, v.mfcc.frame_len, v.mfcc.overlap, v.mfcc.window_phi, v.mfcc.filters,
            v.mfcc.coefficients, v.mfcc.pre_emphasis.map(|p| p.to_string()).unwrap_or_else(|| "off".into()),
            v.codebook_size, v.threshold, v.enrollment.min, v.enrollment.max,
            u.face.tau, u.face.alpha1, u.face.alpha2, u.face.weight,
            u.voice.tau, u.voice.alpha1, u.voice.alpha2, u.voice.weight, u.accept_threshold,
            s.listen_addr, s.store_path.display(), s.max_envelope_bytes, s.auto_train,
            e.seed, e.iterations, e.registered_fraction, e.face_train.min, e.face_train.max, e.face_test,
            e.voice_train.min, e.voice_train.max, e.voice_test, e.min_face_samples, e.strict,
        )
    }
}
