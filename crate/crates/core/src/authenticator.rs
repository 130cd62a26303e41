//! The end-to-end decision path shared by the service, the CLI and the
//! evaluation harness: sample preparation, enrollment, eigenmodel training,
//! and fused identification or verification against a gallery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::eigenfaces::{self, EigenModel, EnrollmentRange, FaceTemplate};
use crate::face_detect::{
    detect_objects, locate_eyes, parse_cascade, validate_face, CascadeModel, DetectParams, EyeSearch,
    InvalidReason, Validity,
};
use crate::face_pipeline::{preprocess_face, CanonicalFace, EyePair};
use crate::fusion::{fuse_pair, FusionDecision, Modality};
use crate::imaging::{affine_warp, load_pgm, AffineTransform, GrayImage};
use crate::profile_store::{ProfileStore, StoreError, UserProfile};
use crate::speech_features::{load_wav, MfccExtractor, MfccSequence, PcmSignal, SpeechError};
use crate::vq_model::{self, lbg_train, Codebook};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSample {
    pub index: usize,
    pub modality: Modality,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("no enrolled users")]
    NoEnrolledUsers,
    #[error("eigenmodel is stale; run train-model")]
    ModelStale,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("user {0:?} already exists")]
    UserExists(String),
    #[error("invalid samples")]
    InvalidSamples(Vec<RejectedSample>),
    #[error("{modality} samples: {count} valid, need {min}..={max}")]
    SampleCount {
        modality: Modality,
        count: usize,
        min: usize,
        max: usize,
        rejected: Vec<RejectedSample>,
    },
    #[error("model training failed: {0}")]
    Model(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Store(StoreError),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::NoEnrolledUsers => "no-enrolled-users",
            AuthError::ModelStale => "model-stale",
            AuthError::UnknownUser(_) => "unknown-user",
            AuthError::UserExists(_) => "user-exists",
            AuthError::InvalidSamples(_) => "invalid-sample",
            AuthError::SampleCount { .. } => "too-few-samples",
            AuthError::Model(_) => "model-error",
            AuthError::Config(_) => "config-error",
            AuthError::Store(e) => e.code(),
        }
    }

    pub fn rejected_samples(&self) -> &[RejectedSample] {
        match self {
            AuthError::InvalidSamples(r) => r,
            AuthError::SampleCount { rejected, .. } => rejected,
            _ => &[],
        }
    }
}

impl From<StoreError> for AuthError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UserExists(id) => AuthError::UserExists(id),
            StoreError::UnknownUser(id) => AuthError::UnknownUser(id),
            other => AuthError::Store(other),
        }
    }
}

/// Complete profiles plus the eigenmodel their templates were enrolled under.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    pub model: EigenModel,
    pub templates: Vec<FaceTemplate>,
    pub codebooks: Vec<Codebook>,
}

impl Gallery {
    /// Keeps complete profiles only, sorted by user id.
    pub fn from_profiles(model: EigenModel, profiles: &[UserProfile]) -> Result<Self, AuthError> {
        let mut complete: Vec<&UserProfile> = profiles.iter().filter(|p| p.is_complete()).collect();
        complete.sort_by(|a, b| a.user_id().cmp(b.user_id()));
        if complete.is_empty() {
            return Err(AuthError::NoEnrolledUsers);
        }
        let templates: Vec<FaceTemplate> = complete.iter().map(|p| p.face_template.clone().expect("complete")).collect();
        if templates.iter().any(|t| t.coefficients.len() != model.components()) {
            return Err(AuthError::ModelStale);
        }
        Ok(Self {
            model,
            templates,
            codebooks: complete
                .iter()
                .map(|p| p.codebook.clone().expect("complete").with_owner(p.user_id()))
                .collect(),
        })
    }

    pub fn from_store(store: &ProfileStore) -> Result<Self, AuthError> {
        let manifest = store.list_profiles()?;
        if manifest.users.is_empty() {
            return Err(AuthError::NoEnrolledUsers);
        }
        if manifest.model_stale {
            return Err(AuthError::ModelStale);
        }
        let model = store.load_eigenmodel()?.ok_or(AuthError::ModelStale)?;
        Self::from_profiles(model, &store.load_all()?)
    }

    pub fn user_ids(&self) -> Vec<&str> {
        self.templates.iter().map(|t| t.user_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthOutcome {
    pub matched_user: String,
    pub face_score: f64,
    pub voice_score: f64,
    pub fused_score: f64,
    pub accept: bool,
    pub decision: FusionDecision,
}

/// Per-user raw distances for one probe pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScores {
    pub face: Vec<(String, f64)>,
    pub voice: Vec<(String, f64)>,
}

pub struct Authenticator {
    config: Config,
    face_cascade: Option<CascadeModel>,
    eye_cascade: Option<CascadeModel>,
    mfcc: MfccExtractor,
}

impl std::fmt::Debug for Authenticator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Authenticator")
            .field("face_cascade", &self.face_cascade.is_some())
            .field("eye_cascade", &self.eye_cascade.is_some())
            .finish()
    }
}

fn load_cascade(path: &Option<std::path::PathBuf>) -> Result<Option<CascadeModel>, AuthError> {
    path.as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AuthError::Config(format!("cannot read cascade {}: {e}", p.display())))?;
            parse_cascade(&text).map_err(|e| AuthError::Config(format!("{}: {e}", p.display())))
        })
        .transpose()
}

impl Authenticator {
    /// Loads the cascades named by the configuration, if any.
    pub fn new(config: Config) -> Result<Self, AuthError> {
        let face = load_cascade(&config.face.face_cascade)?;
        let eye = load_cascade(&config.face.eye_cascade)?;
        Self::with_cascades(config, face, eye)
    }

    pub fn with_cascades(
        config: Config,
        face_cascade: Option<CascadeModel>,
        eye_cascade: Option<CascadeModel>,
    ) -> Result<Self, AuthError> {
        config.validate().map_err(|e| AuthError::Config(e.to_string()))?;
        let mfcc = MfccExtractor::new(config.voice.mfcc).map_err(|e| AuthError::Config(e.to_string()))?;
        Ok(Self {
            config,
            face_cascade,
            eye_cascade,
            mfcc,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn prepare_face(&self, pgm: &[u8], eyes: Option<EyePair>, source_id: &str) -> Result<CanonicalFace, InvalidReason> {
        let img = load_pgm(pgm).map_err(|_| InvalidReason::Unreadable)?;
        self.prepare_face_image(&img, eyes, source_id)
    }

    /// Validity checks, eye location and the canonical normalization chain.
    /// Annotated eye centers take precedence over detection.
    pub fn prepare_face_image(
        &self,
        img: &GrayImage,
        eyes: Option<EyePair>,
        source_id: &str,
    ) -> Result<CanonicalFace, InvalidReason> {
        if img.mean() < self.config.face.dark_mean {
            return Err(InvalidReason::TooDark);
        }
        let eyes = match eyes {
            Some(e) => e,
            None => self.detect_eyes(img)?,
        };
        preprocess_face(img, &eyes, &self.config.face.geometry, source_id).map_err(|_| InvalidReason::MissingEye)
    }

    fn detect_eyes(&self, img: &GrayImage) -> Result<EyePair, InvalidReason> {
        let (face_found, rect) = match &self.face_cascade {
            None => (true, (0, 0, img.width(), img.height())),
            Some(model) => match self.detect_face(img, model) {
                Some(r) => (true, r),
                None => (false, (0, 0, 0, 0)),
            },
        };
        let regions = if face_found {
            self.eye_cascade.as_ref().and_then(|eye| {
                let face = img.crop(rect.0, rect.1, rect.2, rect.3);
                locate_eyes(&face, eye, &EyeSearch::default()).ok()
            })
        } else {
            None
        };
        match validate_face(face_found, regions.as_ref()) {
            Validity::Invalid(reason) => Err(reason),
            Validity::Valid => {
                let r = regions.expect("valid implies located");
                let shift = |p: (f64, f64)| (p.0 + rect.0 as f64, p.1 + rect.1 as f64);
                Ok(EyePair::new(shift(r.left_center), shift(r.right_center)))
            }
        }
    }

    /// Largest detection, in original image coordinates.
    fn detect_face(&self, img: &GrayImage, model: &CascadeModel) -> Option<(usize, usize, usize, usize)> {
        let limit = self.config.face.scaling_width;
        let (scaled, s) = if img.width() > limit {
            let s = limit as f64 / img.width() as f64;
            let t = AffineTransform {
                angle_deg: 0.0,
                scale: s,
                center: (0.0, 0.0),
                translation: (0.0, 0.0),
            };
            let h = ((img.height() as f64 * s).round() as usize).max(1);
            (affine_warp(img, &t, limit, h), s)
        } else {
            (img.clone(), 1.0)
        };
        let best = detect_objects(&scaled, model, DetectParams::default())
            .ok()?
            .into_iter()
            .max_by_key(|d| (d.rect.area(), d.neighbors))?;
        let up = |v: usize| (v as f64 / s).round() as usize;
        Some((up(best.rect.x), up(best.rect.y), up(best.rect.w), up(best.rect.h)))
    }

    pub fn prepare_voice(&self, wav: &[u8]) -> Result<MfccSequence, String> {
        let signal = load_wav(wav).map_err(|e| match e {
            SpeechError::UnsupportedFormat(_) => "unsupported-format".to_owned(),
            _ => "unreadable".to_owned(),
        })?;
        self.prepare_signal(&signal)
    }

    pub fn prepare_signal(&self, signal: &PcmSignal) -> Result<MfccSequence, String> {
        let seq = self.mfcc.extract(signal).map_err(|e| match e {
            SpeechError::RateMismatch { .. } => "rate-mismatch".to_owned(),
            other => other.to_string(),
        })?;
        if seq.is_empty() {
            return Err("too-short".into());
        }
        Ok(seq)
    }

    pub fn train_codebook(&self, voices: &[MfccSequence]) -> Result<Codebook, AuthError> {
        let frames: Vec<Vec<f64>> = voices.iter().flat_map(|s| s.frames.iter().cloned()).collect();
        lbg_train(&frames, self.config.voice.codebook_size).map_err(|e| AuthError::Model(e.to_string()))
    }

    fn check_count(
        modality: Modality,
        count: usize,
        range: EnrollmentRange,
        rejected: &[RejectedSample],
    ) -> Result<(), AuthError> {
        if count < range.min.max(1) || count > range.max {
            return Err(AuthError::SampleCount {
                modality,
                count,
                min: range.min,
                max: range.max,
                rejected: rejected.to_vec(),
            });
        }
        Ok(())
    }

    /// Prepares raw registration samples, reporting every rejected one, and
    /// builds the profile when enough samples of each modality survive.
    pub fn build_profile(
        &self,
        user_id: &str,
        faces: &[(Vec<u8>, Option<EyePair>)],
        voices: &[Vec<u8>],
    ) -> Result<(UserProfile, Vec<RejectedSample>), AuthError> {
        crate::profile_store::validate_user_id(user_id)?;
        let mut rejected = Vec::new();
        let mut canon = Vec::new();
        for (i, (bytes, eyes)) in faces.iter().enumerate() {
            match self.prepare_face(bytes, *eyes, &format!("{user_id}/face/{i}")) {
                Ok(c) => canon.push(c.image().clone()),
                Err(reason) => rejected.push(RejectedSample {
                    index: i,
                    modality: Modality::Face,
                    reason: reason.code().to_owned(),
                }),
            }
        }
        let mut seqs = Vec::new();
        for (i, bytes) in voices.iter().enumerate() {
            match self.prepare_voice(bytes) {
                Ok(s) => seqs.push(s),
                Err(reason) => rejected.push(RejectedSample {
                    index: i,
                    modality: Modality::Voice,
                    reason,
                }),
            }
        }
        Self::check_count(Modality::Face, canon.len(), self.config.face.enrollment, &rejected)?;
        Self::check_count(Modality::Voice, seqs.len(), self.config.voice.enrollment, &rejected)?;
        let codebook = self.train_codebook(&seqs)?;
        Ok((UserProfile::new(user_id, canon, codebook, seqs.len()), rejected))
    }

    /// Trains the eigenmodel on every stored canonical face and re-enrolls
    /// each profile's face template under it.
    pub fn train_model(&self, profiles: &mut [UserProfile]) -> Result<EigenModel, AuthError> {
        if profiles.is_empty() {
            return Err(AuthError::NoEnrolledUsers);
        }
        let vectors: Vec<Vec<f64>> = profiles
            .iter()
            .flat_map(|p| p.canonical_faces.iter().map(|f| f.pixels().iter().map(|&v| v as f64).collect()))
            .collect();
        let model = eigenfaces::train_from_vectors(&vectors).map_err(|e| AuthError::Model(e.to_string()))?;
        if model.is_degenerate() {
            return Err(AuthError::Model("all training faces are identical".into()));
        }
        let any = EnrollmentRange { min: 1, max: usize::MAX };
        for p in profiles.iter_mut() {
            let vs: Vec<Vec<f64>> = p.canonical_faces.iter().map(|f| f.pixels().iter().map(|&v| v as f64).collect()).collect();
            p.face_template = Some(
                eigenfaces::enroll_vectors(&model, p.user_id(), &vs, any).map_err(|e| AuthError::Model(e.to_string()))?,
            );
        }
        Ok(model)
    }

    /// Retrains from the store's profiles and persists model and templates.
    pub fn train_store(&self, store: &ProfileStore) -> Result<(Gallery, String), AuthError> {
        let mut profiles = store.load_all()?;
        let model = self.train_model(&mut profiles)?;
        for p in &profiles {
            store.save_face_template(p.face_template.as_ref().expect("just enrolled"))?;
        }
        let hash = store.save_eigenmodel(&model)?;
        Ok((Gallery::from_profiles(model, &profiles)?, hash))
    }

    pub fn probe_scores(&self, gallery: &Gallery, face: &CanonicalFace, voice: &MfccSequence) -> Result<ProbeScores, AuthError> {
        let coef = gallery.model.project(face).map_err(|e| AuthError::Model(e.to_string()))?;
        Ok(ProbeScores {
            face: eigenfaces::score_all(&gallery.templates, &coef).map_err(|_| AuthError::ModelStale)?,
            voice: vq_model::score_all(&gallery.codebooks, &voice.frames).map_err(|e| AuthError::Model(e.to_string()))?,
        })
    }

    /// Fused decision. With a claimed id only that user is scored; otherwise
    /// the user with the lowest fused score is reported (ties to the smaller id).
    pub fn authenticate(
        &self,
        gallery: &Gallery,
        face: &CanonicalFace,
        voice: &MfccSequence,
        claimed: Option<&str>,
    ) -> Result<AuthOutcome, AuthError> {
        let scores = self.probe_scores(gallery, face, voice)?;
        decide_fused(&scores, claimed, &self.config)
    }
}

/// Applies the fusion rule to precomputed per-user distances.
pub fn decide_fused(scores: &ProbeScores, claimed: Option<&str>, config: &Config) -> Result<AuthOutcome, AuthError> {
    let mut best: Option<AuthOutcome> = None;
    for ((user, f), (vuser, v)) in scores.face.iter().zip(&scores.voice) {
        debug_assert_eq!(user, vuser);
        if claimed.is_some_and(|c| c != user) {
            continue;
        }
        let decision = fuse_pair(*f, *v, &config.fusion).map_err(|e| AuthError::Model(e.to_string()))?;
        let better = match &best {
            None => true,
            Some(b) => decision.fused < b.fused_score || (decision.fused == b.fused_score && user < &b.matched_user),
        };
        if better {
            best = Some(AuthOutcome {
                matched_user: user.clone(),
                face_score: *f,
                voice_score: *v,
                fused_score: decision.fused,
                accept: decision.accept,
                decision,
            });
        }
    }
    match (best, claimed) {
        (Some(b), _) => Ok(b),
        (None, Some(c)) => Err(AuthError::UnknownUser(c.to_owned())),
        (None, None) => Err(AuthError::NoEnrolledUsers),
    }
}
