//! Simulation-study harness: dataset indexing, the randomized face/voice
//! pairing protocol, confusion matrices, metrics and threshold sweeps.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authenticator::{decide_fused, Authenticator, Gallery, ProbeScores};
use crate::config::EvaluationConfig;
use crate::eigenfaces::{self, EnrollmentRange};
use crate::face_pipeline::{CanonicalFace, EyePair};
use crate::fusion::Modality;
use crate::imaging::write_pgm;
use crate::speech_features::{write_wav, MfccSequence};
use crate::synthetic::{render_face, render_voice, FaceIdentity, VoiceIdentity};
use crate::vq_model::{self, lbg_train};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no valid {0} subjects in dataset")]
    NoSubjects(Modality),
    #[error("{faces} face subjects cannot cover {voices} voice subjects")]
    TooFewFaceSubjects { faces: usize, voices: usize },
    #[error("strict mode: {0}")]
    Strict(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self { tn, fp, fn_, tp }
    }

    pub fn record(&mut self, actual_ru: bool, recognized_ru: bool) {
        match (actual_ru, recognized_ru) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn add(&mut self, other: &Self) {
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tp += other.tp;
    }
}

/// Percentages; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    pub precision: Option<f64>,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let pos = cm.tp + cm.fn_;
    let neg = cm.fp + cm.tn;
    MetricsReport {
        accuracy: pct(cm.tp + cm.tn, cm.total()),
        tpr: pct(cm.tp, pos),
        fpr: pct(cm.fp, neg),
        tnr: pct(cm.tn, neg),
        fnr: pct(cm.fn_, pos),
        precision: pct(cm.tp, cm.tp + cm.fp),
    }
}

impl MetricsReport {
    pub const NAMES: [&'static str; 6] = ["accuracy", "tpr", "fpr", "tnr", "fnr", "precision"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [self.accuracy, self.tpr, self.fpr, self.tnr, self.fnr, self.precision]
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| format!("{x:.2}"))
}

// ---------------------------------------------------------------- indexing

#[derive(Debug, Clone)]
pub enum Prepared {
    Face(CanonicalFace),
    Voice(MfccSequence),
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub verdict: Result<Prepared, String>,
}

#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub id: String,
    pub samples: Vec<SampleRecord>,
}

impl SubjectRecord {
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].verdict.is_ok()).collect()
    }

    fn face(&self, i: usize) -> &CanonicalFace {
        match &self.samples[i].verdict {
            Ok(Prepared::Face(f)) => f,
            _ => panic!("sample {i} of {} is not a valid face", self.id),
        }
    }

    fn voice(&self, i: usize) -> &MfccSequence {
        match &self.samples[i].verdict {
            Ok(Prepared::Voice(v)) => v,
            _ => panic!("sample {i} of {} is not a valid voice", self.id),
        }
    }
}

/// Per-subject samples with validity verdicts. Valid samples carry their
/// prepared form so trials never re-run the pipelines.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub modality: Modality,
    pub subjects: Vec<SubjectRecord>,
    /// Subjects dropped for too few valid samples, with their valid count.
    pub dropped: Vec<(String, usize)>,
}

impl DatasetIndex {
    pub fn sample_count(&self) -> usize {
        self.subjects.iter().map(|s| s.samples.len()).sum()
    }

    pub fn invalid_count(&self) -> usize {
        self.subjects.iter().flat_map(|s| &s.samples).filter(|s| s.verdict.is_err()).count()
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        out.push(entry.map_err(io)?.path());
    }
    out.sort();
    Ok(out)
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Indexes `<root>/<subject>/<sample>.pgm` (with optional `.eyes` sidecars)
/// or `<root>/<subject>/<sample>.wav`.
pub fn index_dataset(
    root: &Path,
    modality: Modality,
    auth: &Authenticator,
    min_valid: usize,
) -> Result<DatasetIndex, EvalError> {
    let ext = match modality {
        Modality::Face => "pgm",
        Modality::Voice => "wav",
    };
    let subject_dirs: Vec<PathBuf> = read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()).collect();
    let mut subjects = Vec::new();
    let mut dropped = Vec::new();
    for dir in subject_dirs {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let files: Vec<PathBuf> = read_dir_sorted(&dir)?.into_iter().filter(|p| has_ext(p, ext)).collect();
        let samples: Vec<SampleRecord> = files
            .into_par_iter()
            .map(|path| {
                let verdict = prepare_file(&path, modality, auth);
                SampleRecord { path, verdict }
            })
            .collect();
        let record = SubjectRecord { id, samples };
        let valid = record.valid_indices().len();
        if valid < min_valid.max(1) {
            log::warn!("dropping {modality} subject {}: {valid} valid samples", record.id);
            dropped.push((record.id, valid));
        } else {
            subjects.push(record);
        }
    }
    if subjects.is_empty() {
        return Err(EvalError::NoSubjects(modality));
    }
    Ok(DatasetIndex {
        modality,
        subjects,
        dropped,
    })
}

fn prepare_file(path: &Path, modality: Modality, auth: &Authenticator) -> Result<Prepared, String> {
    let bytes = std::fs::read(path).map_err(|_| "unreadable".to_owned())?;
    let source = path.to_string_lossy();
    match modality {
        Modality::Face => {
            let eyes = std::fs::read_to_string(path.with_extension("eyes"))
                .ok()
                .and_then(|t| EyePair::parse_sidecar(&t));
            auth.prepare_face(&bytes, eyes, &source)
                .map(Prepared::Face)
                .map_err(|r| r.code().to_owned())
        }
        Modality::Voice => auth.prepare_voice(&bytes).map(Prepared::Voice),
    }
}

// ------------------------------------------------------------------ trials

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectTrial {
    /// Positions into the voice and face indexes' subject lists.
    pub voice_subject: usize,
    pub face_subject: usize,
    pub registered: bool,
    /// Sample positions within the subject's sample list.
    pub face_train: Vec<usize>,
    pub face_test: Vec<usize>,
    pub voice_train: Vec<usize>,
    pub voice_test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iteration {
    pub subjects: Vec<SubjectTrial>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub seed: u64,
    pub iterations: Vec<Iteration>,
    pub warnings: Vec<String>,
}

/// Minimum (train, test) per modality once availability clamping kicks in.
const FACE_FLOOR: (usize, usize) = (2, 1);
const VOICE_FLOOR: (usize, usize) = (1, 1);

struct Split<'a> {
    what: &'a str,
    train: EnrollmentRange,
    test: usize,
    floor: (usize, usize),
}

impl Split<'_> {
    /// Returns (train, test) sample positions drawn without replacement.
    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        subject: &str,
        valid: &[usize],
        registered: bool,
        strict: bool,
        warnings: &mut BTreeSet<String>,
    ) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
        let n = valid.len();
        let wanted_train = rng.random_range(self.train.min..=self.train.max);
        let test = self.test.min(n.saturating_sub(self.floor.0));
        let train = if registered { wanted_train.min(n - test) } else { 0 };
        if test < self.test || (registered && train < wanted_train) {
            let msg = format!(
                "{subject}: {n} valid {} samples; clamped to {train} train / {test} test",
                self.what
            );
            if strict && (test < self.test || train < self.train.min) {
                return Err(EvalError::Strict(msg));
            }
            warnings.insert(msg);
        }
        let mut pool = valid.to_vec();
        pool.shuffle(rng);
        let test_set = pool[..test].to_vec();
        let train_set = pool[test..test + train].to_vec();
        Ok((train_set, test_set))
    }

    fn usable(&self, n: usize) -> bool {
        n >= self.floor.0 + self.floor.1
    }
}

/// Randomized protocol: each voice subject is paired with a distinct face
/// subject, pairs are split into registered and non-registered pools, and
/// samples are drawn for training and testing. Deterministic given the seed.
pub fn build_trials(
    faces: &DatasetIndex,
    voices: &DatasetIndex,
    cfg: &EvaluationConfig,
) -> Result<TrialPlan, EvalError> {
    let face_split = Split {
        what: "face",
        train: cfg.face_train,
        test: cfg.face_test,
        floor: FACE_FLOOR,
    };
    let voice_split = Split {
        what: "voice",
        train: cfg.voice_train,
        test: cfg.voice_test,
        floor: VOICE_FLOOR,
    };
    let mut warnings = BTreeSet::new();
    let usable = |idx: &DatasetIndex, split: &Split, warnings: &mut BTreeSet<String>| -> Vec<usize> {
        (0..idx.subjects.len())
            .filter(|&s| {
                let n = idx.subjects[s].valid_indices().len();
                let ok = split.usable(n);
                if !ok {
                    warnings.insert(format!("{}: only {n} valid {} samples; subject dropped", idx.subjects[s].id, split.what));
                }
                ok
            })
            .collect()
    };
    let face_subjects = usable(faces, &face_split, &mut warnings);
    let voice_subjects = usable(voices, &voice_split, &mut warnings);
    if voice_subjects.is_empty() {
        return Err(EvalError::NoSubjects(Modality::Voice));
    }
    if face_subjects.len() < voice_subjects.len() {
        return Err(EvalError::TooFewFaceSubjects {
            faces: face_subjects.len(),
            voices: voice_subjects.len(),
        });
    }
    if !(cfg.registered_fraction > 0.0 && cfg.registered_fraction <= 1.0) {
        return Err(EvalError::Invalid("registered_fraction must lie in (0, 1]".into()));
    }
    let n = voice_subjects.len();
    let registered_count = ((n as f64 * cfg.registered_fraction).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut face_perm = face_subjects.clone();
        face_perm.shuffle(&mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut registered = vec![false; n];
        for &i in &order[..registered_count] {
            registered[i] = true;
        }
        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            let (vs, fs) = (voice_subjects[i], face_perm[i]);
            let (face_train, face_test) = face_split.draw(
                &mut rng,
                &faces.subjects[fs].id,
                &faces.subjects[fs].valid_indices(),
                registered[i],
                cfg.strict,
                &mut warnings,
            )?;
            let (voice_train, voice_test) = voice_split.draw(
                &mut rng,
                &voices.subjects[vs].id,
                &voices.subjects[vs].valid_indices(),
                registered[i],
                cfg.strict,
                &mut warnings,
            )?;
            subjects.push(SubjectTrial {
                voice_subject: vs,
                face_subject: fs,
                registered: registered[i],
                face_train,
                face_test,
                voice_train,
                voice_test,
            });
        }
        iterations.push(Iteration { subjects });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(TrialPlan {
        seed: cfg.seed,
        iterations,
        warnings: warnings.into_iter().collect(),
    })
}

// -------------------------------------------------------------- evaluation

/// One probe outcome kept for re-thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub actual_ru: bool,
    /// Best (lowest) score over the gallery.
    pub score: f64,
    /// Best match is the probe's own identity.
    pub correct_identity: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeLog {
    pub face: Vec<ProbeRecord>,
    pub voice: Vec<ProbeRecord>,
    pub fused: Vec<ProbeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityReport {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    /// Genuine probes accepted as a different registered user.
    pub identity_confusions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub iterations: usize,
    pub face: ModalityReport,
    pub voice: ModalityReport,
    pub ensemble: ModalityReport,
    /// Probes or enrollments that failed inside the pipelines.
    pub exclusions: u64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub probes: ProbeLog,
}

#[derive(Debug, Default)]
struct Tally {
    face: ConfusionMatrix,
    voice: ConfusionMatrix,
    fused: ConfusionMatrix,
    confusions: [u64; 3],
    exclusions: u64,
    log: ProbeLog,
}

fn user_name(faces: &DatasetIndex, voices: &DatasetIndex, t: &SubjectTrial) -> String {
    format!("{}+{}", faces.subjects[t.face_subject].id, voices.subjects[t.voice_subject].id)
}

fn best(scores: &[(String, f64)]) -> Option<(&str, f64)> {
    scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .map(|(u, s)| (u.as_str(), *s))
}

fn run_iteration(it: &Iteration, faces: &DatasetIndex, voices: &DatasetIndex, auth: &Authenticator) -> Tally {
    let cfg = auth.config();
    let mut tally = Tally::default();
    let registered: Vec<&SubjectTrial> = it.subjects.iter().filter(|t| t.registered).collect();

    let gallery = (|| -> Option<Gallery> {
        let train: Vec<Vec<f64>> = registered
            .iter()
            .flat_map(|t| t.face_train.iter().map(|&i| faces.subjects[t.face_subject].face(i).to_vector()))
            .collect();
        let model = eigenfaces::train_from_vectors(&train).ok()?;
        let any = EnrollmentRange { min: 1, max: usize::MAX };
        let mut templates = Vec::new();
        let mut codebooks = Vec::new();
        for t in &registered {
            let name = user_name(faces, voices, t);
            let fs = &faces.subjects[t.face_subject];
            let vecs: Vec<Vec<f64>> = t.face_train.iter().map(|&i| fs.face(i).to_vector()).collect();
            templates.push(eigenfaces::enroll_vectors(&model, &name, &vecs, any).ok()?);
            let vsub = &voices.subjects[t.voice_subject];
            let frames: Vec<Vec<f64>> = t.voice_train.iter().flat_map(|&i| vsub.voice(i).frames.iter().cloned()).collect();
            codebooks.push(lbg_train(&frames, cfg.voice.codebook_size).ok()?.with_owner(name));
        }
        Some(Gallery {
            model,
            templates,
            codebooks,
        })
    })();
    let Some(gallery) = gallery else {
        tally.exclusions += 1;
        return tally;
    };

    for t in &it.subjects {
        let own = user_name(faces, voices, t);
        let fs = &faces.subjects[t.face_subject];
        let vs = &voices.subjects[t.voice_subject];
        let face_scores: Vec<Option<Vec<(String, f64)>>> = t
            .face_test
            .iter()
            .map(|&i| {
                let coef = gallery.model.project(fs.face(i)).ok()?;
                eigenfaces::score_all(&gallery.templates, &coef).ok()
            })
            .collect();
        let voice_scores: Vec<Option<Vec<(String, f64)>>> = t
            .voice_test
            .iter()
            .map(|&i| vq_model::score_all(&gallery.codebooks, &vs.voice(i).frames).ok())
            .collect();

        let mut unimodal = |scores: &[Option<Vec<(String, f64)>>], threshold: f64, slot: usize| {
            for s in scores {
                match s.as_deref().and_then(best) {
                    None => tally.exclusions += 1,
                    Some((user, d)) => {
                        let accept = d < threshold;
                        let (cm, log) = match slot {
                            0 => (&mut tally.face, &mut tally.log.face),
                            _ => (&mut tally.voice, &mut tally.log.voice),
                        };
                        cm.record(t.registered, accept);
                        if t.registered && accept && user != own {
                            tally.confusions[slot] += 1;
                        }
                        log.push(ProbeRecord {
                            actual_ru: t.registered,
                            score: d,
                            correct_identity: user == own,
                        });
                    }
                }
            }
        };
        unimodal(&face_scores, cfg.face.threshold, 0);
        unimodal(&voice_scores, cfg.voice.threshold, 1);

        for f in &face_scores {
            for v in &voice_scores {
                let (Some(face), Some(voice)) = (f, v) else {
                    tally.exclusions += 1;
                    continue;
                };
                let probe = ProbeScores {
                    face: face.clone(),
                    voice: voice.clone(),
                };
                match decide_fused(&probe, None, cfg) {
                    Err(_) => tally.exclusions += 1,
                    Ok(out) => {
                        tally.fused.record(t.registered, out.accept);
                        if t.registered && out.accept && out.matched_user != own {
                            tally.confusions[2] += 1;
                        }
                        tally.log.fused.push(ProbeRecord {
                            actual_ru: t.registered,
                            score: out.fused_score,
                            correct_identity: out.matched_user == own,
                        });
                    }
                }
            }
        }
    }
    tally
}

/// Runs every iteration of the plan. Unimodal tallies threshold the best
/// distance of each test sample; the ensemble probes every face-test ×
/// voice-test combination of a subject through the fusion rule.
pub fn run_evaluation(
    plan: &TrialPlan,
    faces: &DatasetIndex,
    voices: &DatasetIndex,
    auth: &Authenticator,
) -> EvaluationReport {
    let tallies: Vec<Tally> = plan
        .iterations
        .par_iter()
        .map(|it| run_iteration(it, faces, voices, auth))
        .collect();
    let mut total = Tally::default();
    for t in tallies {
        total.face.add(&t.face);
        total.voice.add(&t.voice);
        total.fused.add(&t.fused);
        for k in 0..3 {
            total.confusions[k] += t.confusions[k];
        }
        total.exclusions += t.exclusions;
        total.log.face.extend(t.log.face);
        total.log.voice.extend(t.log.voice);
        total.log.fused.extend(t.log.fused);
    }
    let report = |cm: ConfusionMatrix, c: u64| ModalityReport {
        confusion: cm,
        metrics: compute_metrics(&cm),
        identity_confusions: c,
    };
    EvaluationReport {
        seed: plan.seed,
        iterations: plan.iterations.len(),
        face: report(total.face, total.confusions[0]),
        voice: report(total.voice, total.confusions[1]),
        ensemble: report(total.fused, total.confusions[2]),
        exclusions: total.exclusions,
        warnings: plan.warnings.clone(),
        probes: total.log,
    }
}

// ------------------------------------------------------------------ sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepTarget {
    Face,
    Voice,
    Fused,
}

impl std::str::FromStr for SweepTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "face" => Ok(Self::Face),
            "voice" => Ok(Self::Voice),
            "fused" | "ensemble" => Ok(Self::Fused),
            other => Err(format!("unknown sweep target {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
}

/// Inclusive arithmetic grid `from, from+step, …, ≤ to`.
pub fn grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, EvalError> {
    if !(step > 0.0) || !from.is_finite() || !to.is_finite() || to < from {
        return Err(EvalError::Invalid(format!("bad grid {from}..{to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| from + i as f64 * step).collect())
}

/// Re-thresholds stored best scores; nothing is retrained.
pub fn threshold_sweep(log: &ProbeLog, target: SweepTarget, thresholds: &[f64]) -> Result<Vec<SweepPoint>, EvalError> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::Invalid("sweep grid must be non-empty and ascending".into()));
    }
    let probes = match target {
        SweepTarget::Face => &log.face,
        SweepTarget::Voice => &log.voice,
        SweepTarget::Fused => &log.fused,
    };
    Ok(thresholds
        .iter()
        .map(|&th| {
            let mut cm = ConfusionMatrix::default();
            for p in probes {
                cm.record(p.actual_ru, p.score < th);
            }
            let m = compute_metrics(&cm);
            SweepPoint {
                threshold: th,
                fpr: m.fpr,
                fnr: m.fnr,
                accuracy: m.accuracy,
                confusion: cm,
            }
        })
        .collect())
}

// ----------------------------------------------------------------- reports

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn report_csv(report: &EvaluationReport) -> String {
    let mut out = format!("# seed={} iterations={}\nmodality,metric,value\n", report.seed, report.iterations);
    for (name, m) in [("face", &report.face), ("voice", &report.voice), ("ensemble", &report.ensemble)] {
        for (metric, v) in MetricsReport::NAMES.iter().zip(m.metrics.values()) {
            let _ = writeln!(out, "{name},{metric},{}", fmt_pct(v));
        }
    }
    out
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn write_reports(dir: &Path, report: &EvaluationReport) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv = dir.join("report.csv");
    std::fs::write(&csv, report_csv(report)).map_err(io_err(&csv))?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json, text + "\n").map_err(io_err(&json))?;
    Ok(())
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,fpr,fnr,accuracy\n");
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.threshold, cell(p.fpr), cell(p.fnr), cell(p.accuracy));
    }
    out
}

pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> Result<(), EvalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, sweep_csv(points)).map_err(io_err(path))
}

// ----------------------------------------------------------------- corpus

pub const CORPUS_FACE_SIZE: usize = 140;
pub const CORPUS_VOICE_SECONDS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusLayout {
    pub faces: PathBuf,
    pub voices: PathBuf,
}

impl CorpusLayout {
    pub fn under(root: &Path) -> Self {
        Self {
            faces: root.join("faces"),
            voices: root.join("voices"),
        }
    }
}

/// Writes `faces/sNN/MM.pgm` (+ `.eyes`) and `voices/sNN/MM.wav` under `root`.
pub fn generate_synthetic_corpus(root: &Path, seed: u64, subjects: usize, samples: usize) -> Result<CorpusLayout, EvalError> {
    if subjects < 4 {
        return Err(EvalError::Invalid("synthetic corpus needs at least 4 subjects".into()));
    }
    let layout = CorpusLayout::under(root);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let write = |path: PathBuf, data: &[u8]| std::fs::write(&path, data).map_err(io_err(&path));
    for s in 0..subjects {
        let id = format!("s{:02}", s + 1);
        let fdir = layout.faces.join(&id);
        let vdir = layout.voices.join(&id);
        std::fs::create_dir_all(&fdir).map_err(io_err(&fdir))?;
        std::fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
        let face = FaceIdentity::random(&mut rng);
        let voice = VoiceIdentity::random(&mut rng);
        for k in 0..samples {
            let (img, eyes) = render_face(&face, &mut rng, CORPUS_FACE_SIZE);
            write(fdir.join(format!("{:02}.pgm", k + 1)), &write_pgm(&img))?;
            write(fdir.join(format!("{:02}.eyes", k + 1)), eyes.to_sidecar().as_bytes())?;
            let pcm = render_voice(&voice, &mut rng, 16000, CORPUS_VOICE_SECONDS);
            write(vdir.join(format!("{:02}.wav", k + 1)), &write_wav(&pcm))?;
        }
    }
    Ok(layout)
}

/// Index both modalities of a corpus, build the plan and evaluate.
pub fn evaluate_corpus(
    layout: &CorpusLayout,
    auth: &Authenticator,
    cfg: &EvaluationConfig,
) -> Result<(TrialPlan, EvaluationReport), EvalError> {
    let faces = index_dataset(&layout.faces, Modality::Face, auth, cfg.min_face_samples)?;
    let voices = index_dataset(&layout.voices, Modality::Voice, auth, 1)?;
    let plan = build_trials(&faces, &voices, cfg)?;
    let report = run_evaluation(&plan, &faces, &voices, auth);
    Ok((plan, report))
}
