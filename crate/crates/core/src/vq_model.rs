//! Speaker models: LBG vector quantization of MFCC frames and
//! average-distortion matching of a probe utterance against enrolled codebooks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{self, BinError};

pub const DEFAULT_CODEBOOK_SIZE: usize = 8;
pub const SPLIT_EPSILON: f64 = 0.01;
pub const LLOYD_TOLERANCE: f64 = 1e-6;
pub const LLOYD_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_VOICE_THRESHOLD: f64 = 2.6;

const MAGIC: &[u8; 4] = b"BMCB";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqError {
    #[error("no training vectors")]
    Empty,
    #[error("codebook size {0} is not a power of two")]
    Size(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("no enrolled codebooks")]
    NoCodebooks,
    #[error("codebook has no owner id")]
    Unowned,
    #[error(transparent)]
    Format(#[from] BinError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub codewords: Vec<Vec<f64>>,
    /// Mean squared distance of the training vectors to their nearest codeword.
    pub distortion: f64,
    pub owner: Option<String>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codewords.first().map_or(0, Vec::len)
    }

    pub fn with_owner(mut self, owner: impl Into<String>) -> Self {
        self.owner = Some(owner.into());
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = binio::Writer::new(MAGIC);
        w.u32(self.len() as u32).u32(self.dim() as u32);
        w.f64s(&[self.distortion]);
        w.bytes(self.owner.as_deref().unwrap_or("").as_bytes());
        for c in &self.codewords {
            w.f64s(c);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VqError> {
        let mut r = binio::Reader::new(bytes, MAGIC)?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let distortion = r.f64s(1)?[0];
        let owner = std::str::from_utf8(r.bytes()?)
            .map_err(|e| BinError::Invalid(format!("owner id: {e}")))?
            .to_owned();
        let codewords = (0..k).map(|_| r.f64s(d)).collect::<Result<_, _>>()?;
        r.finish()?;
        Ok(Self {
            codewords,
            distortion,
            owner: (!owner.is_empty()).then_some(owner),
        })
    }

    /// One codeword per line, space-separated.
    pub fn to_text(&self) -> String {
        self.codewords
            .iter()
            .map(|c| c.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ") + "\n")
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest codeword index (first on ties) and squared distance.
fn nearest(codewords: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in codewords.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_dims(vectors: &[Vec<f64>], dim: usize) -> Result<(), VqError> {
    match vectors.iter().find(|v| v.len() != dim) {
        Some(v) => Err(VqError::Dimension {
            expected: dim,
            found: v.len(),
        }),
        None => Ok(()),
    }
}

/// Distortion after every assignment step, one inner vector per codebook size.
pub type DistortionTrace = Vec<Vec<f64>>;

pub fn lbg_train(vectors: &[Vec<f64>], k: usize) -> Result<Codebook, VqError> {
    lbg_train_traced(vectors, k).map(|(cb, _)| cb)
}

pub fn lbg_train_traced(vectors: &[Vec<f64>], k: usize) -> Result<(Codebook, DistortionTrace), VqError> {
    if vectors.is_empty() {
        return Err(VqError::Empty);
    }
    if k == 0 || !k.is_power_of_two() {
        return Err(VqError::Size(k));
    }
    let dim = vectors[0].len();
    check_dims(vectors, dim)?;
    let n = vectors.len() as f64;

    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut codewords = vec![mean];
    let mut trace = Vec::new();
    let mut distortion = vectors.iter().map(|v| sq_dist(&codewords[0], v)).sum::<f64>() / n;
    trace.push(vec![distortion]);

    while codewords.len() < k {
        codewords = codewords
            .iter()
            .flat_map(|c| {
                [
                    c.iter().map(|x| x * (1.0 + SPLIT_EPSILON)).collect::<Vec<_>>(),
                    c.iter().map(|x| x * (1.0 - SPLIT_EPSILON)).collect(),
                ]
            })
            .collect();
        let (d, stage) = lloyd(vectors, &mut codewords);
        distortion = d;
        trace.push(stage);
    }
    Ok((
        Codebook {
            codewords,
            distortion,
            owner: None,
        },
        trace,
    ))
}

fn lloyd(vectors: &[Vec<f64>], codewords: &mut [Vec<f64>]) -> (f64, Vec<f64>) {
    let n = vectors.len() as f64;
    let dim = codewords[0].len();
    let mut stage = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..LLOYD_MAX_ITERATIONS {
        let assign: Vec<(usize, f64)> = vectors.iter().map(|v| nearest(codewords, v)).collect();
        let d = assign.iter().map(|a| a.1).sum::<f64>() / n;
        stage.push(d);
        if d == 0.0 || (prev.is_finite() && (prev - d) / prev < LLOYD_TOLERANCE) {
            break;
        }
        prev = d;

        let mut sums = vec![vec![0.0; dim]; codewords.len()];
        let mut counts = vec![0usize; codewords.len()];
        for (v, &(c, _)) in vectors.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        for (c, (s, &m)) in codewords.iter_mut().zip(sums.iter().zip(&counts)) {
            if m > 0 {
                *c = s.iter().map(|x| x / m as f64).collect();
            }
        }
        // re-seed dead cells at the worst-quantized vectors
        let empty: Vec<usize> = (0..codewords.len()).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            let mut err: Vec<(usize, f64)> = vectors
                .iter()
                .zip(&assign)
                .enumerate()
                .map(|(i, (v, &(c, _)))| (i, sq_dist(&codewords[c], v)))
                .collect();
            err.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (slot, &(vi, _)) in empty.iter().zip(err.iter().cycle()) {
                codewords[*slot] = vectors[vi].clone();
            }
        }
    }
    (*stage.last().expect("at least one iteration"), stage)
}

/// Mean Euclidean distance from each probe vector to its nearest codeword.
pub fn codebook_distance(probe: &[Vec<f64>], codebook: &Codebook) -> Result<f64, VqError> {
    if codebook.is_empty() {
        return Err(VqError::NoCodebooks);
    }
    check_dims(probe, codebook.dim())?;
    if probe.is_empty() {
        return Err(VqError::Empty);
    }
    Ok(probe.iter().map(|v| nearest(&codebook.codewords, v).1.sqrt()).sum::<f64>() / probe.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceMatch {
    pub user_id: String,
    pub distance: f64,
    pub accept: bool,
}

/// Distance to every owned codebook, in input order.
pub fn score_all(codebooks: &[Codebook], probe: &[Vec<f64>]) -> Result<Vec<(String, f64)>, VqError> {
    codebooks
        .iter()
        .map(|cb| {
            let owner = cb.owner.clone().ok_or(VqError::Unowned)?;
            Ok((owner, codebook_distance(probe, cb)?))
        })
        .collect()
}

/// Argmin over `(id, distance)`; ties go to the lexicographically smaller id.
pub(crate) fn best_of(scores: Vec<(String, f64)>) -> Option<(String, f64)> {
    scores
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
}

pub fn match_voice(codebooks: &[Codebook], probe: &[Vec<f64>], threshold: f64) -> Result<VoiceMatch, VqError> {
    if codebooks.is_empty() {
        return Err(VqError::NoCodebooks);
    }
    let (user_id, distance) = best_of(score_all(codebooks, probe)?).expect("non-empty");
    Ok(VoiceMatch {
        user_id,
        distance,
        accept: distance < threshold,
    })
}
