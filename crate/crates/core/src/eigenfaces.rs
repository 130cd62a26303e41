//! Eigenfaces: PCA subspace learned with the snapshot method, per-user mean
//! coefficient templates and nearest-template matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{self, BinError};
use crate::face_pipeline::CanonicalFace;
use crate::linalg::{self, SymMatrix};

pub const DEFAULT_FACE_THRESHOLD: f64 = 2800.0;
/// Components with eigenvalue at or below this fraction of the largest are dropped.
pub const RELATIVE_EIGEN_FLOOR: f64 = 1e-8;

const MODEL_MAGIC: &[u8; 4] = b"BMEM";
const TEMPLATE_MAGIC: &[u8; 4] = b"BMFT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("need at least 2 training faces, got {0}")]
    InsufficientData(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("eigenmodel is degenerate (no retained components)")]
    Degenerate,
    #[error("{count} enrollment faces outside the allowed range {min}..={max}")]
    Enrollment { count: usize, min: usize, max: usize },
    #[error("no enrolled face templates")]
    NoTemplates,
    #[error(transparent)]
    Format(#[from] BinError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenModel {
    mean: Vec<f64>,
    /// Unit eigenvectors in pixel space, ordered by decreasing eigenvalue.
    eigenvectors: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    training_size: usize,
}

impl EigenModel {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvectors(&self) -> &[Vec<f64>] {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn training_size(&self) -> usize {
        self.training_size
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.eigenvectors.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.eigenvectors.is_empty()
    }

    /// Keeps only the leading `k` components.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.components());
        Self {
            mean: self.mean.clone(),
            eigenvectors: self.eigenvectors[..k].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            training_size: self.training_size,
        }
    }

    pub fn project_vector(&self, x: &[f64]) -> Result<Vec<f64>, EigenError> {
        if self.is_degenerate() {
            return Err(EigenError::Degenerate);
        }
        if x.len() != self.dim() {
            return Err(EigenError::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.eigenvectors.iter().map(|v| linalg::dot(v, &centered)).collect())
    }

    pub fn project(&self, face: &CanonicalFace) -> Result<Vec<f64>, EigenError> {
        self.project_vector(&face.to_vector())
    }

    pub fn reconstruct(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, v) in coefficients.iter().zip(&self.eigenvectors) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
        out
    }

    /// `BMEM`, version, dim, component count, training size, then mean,
    /// eigenvalues and eigenvectors as f64 arrays.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = binio::Writer::new(MODEL_MAGIC);
        w.u32(self.dim() as u32)
            .u32(self.components() as u32)
            .u64(self.training_size as u64)
            .f64s(&self.mean)
            .f64s(&self.eigenvalues);
        for v in &self.eigenvectors {
            w.f64s(v);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EigenError> {
        let mut r = binio::Reader::new(bytes, MODEL_MAGIC)?;
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        let training_size = r.u64()? as usize;
        let mean = r.f64s(dim)?;
        let eigenvalues = r.f64s(k)?;
        let eigenvectors = (0..k).map(|_| r.f64s(dim)).collect::<Result<_, _>>()?;
        r.finish()?;
        Ok(Self {
            mean,
            eigenvectors,
            eigenvalues,
            training_size,
        })
    }
}

pub fn train_eigenmodel(faces: &[CanonicalFace]) -> Result<EigenModel, EigenError> {
    let vectors: Vec<Vec<f64>> = faces.iter().map(CanonicalFace::to_vector).collect();
    train_from_vectors(&vectors)
}

/// Snapshot PCA over flattened images: eigen-decompose `(1/M)·AᵀA` for the
/// mean-centered data matrix `A`, lift each eigenvector `v` to `A·v` and
/// normalize. Eigenvalues are those of the covariance `(1/M)·A·Aᵀ`.
pub fn train_from_vectors(vectors: &[Vec<f64>]) -> Result<EigenModel, EigenError> {
    let m = vectors.len();
    if m < 2 {
        return Err(EigenError::InsufficientData(m));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(EigenError::Dimension {
            expected: dim,
            found: v.len(),
        });
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (a, x) in mean.iter_mut().zip(v) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, a)| x - a).collect())
        .collect();

    let gram = SymMatrix::from_fn(m, |i, j| linalg::dot(&centered[i], &centered[j]) / m as f64);
    let eig = linalg::symmetric_eigen(&gram);
    let top = eig.values.first().copied().unwrap_or(0.0);

    let mut eigenvectors: Vec<Vec<f64>> = Vec::new();
    let mut eigenvalues = Vec::new();
    if top > 0.0 {
        for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
            if *lambda <= RELATIVE_EIGEN_FLOOR * top {
                break;
            }
            let mut u = vec![0.0; dim];
            for (coef, row) in v.iter().zip(&centered) {
                for (o, x) in u.iter_mut().zip(row) {
                    *o += coef * x;
                }
            }
            // clean up residual overlap with earlier components
            for prev in &eigenvectors {
                let d = linalg::dot(&u, prev);
                for (o, p) in u.iter_mut().zip(prev) {
                    *o -= d * p;
                }
            }
            let n = linalg::norm(&u);
            if n <= 0.0 {
                continue;
            }
            let peak = u.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            let sign = if peak < 0.0 { -1.0 } else { 1.0 };
            u.iter_mut().for_each(|x| *x *= sign / n);
            eigenvectors.push(u);
            eigenvalues.push(*lambda);
        }
    }
    Ok(EigenModel {
        mean,
        eigenvectors,
        eigenvalues,
        training_size: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollmentRange {
    pub min: usize,
    pub max: usize,
}

impl Default for EnrollmentRange {
    fn default() -> Self {
        Self { min: 20, max: 30 }
    }
}

impl EnrollmentRange {
    pub fn check(&self, count: usize) -> Result<(), EigenError> {
        if count < self.min.max(1) || count > self.max {
            return Err(EigenError::Enrollment {
                count,
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTemplate {
    pub user_id: String,
    pub coefficients: Vec<f64>,
    pub samples: usize,
}

impl FaceTemplate {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = binio::Writer::new(TEMPLATE_MAGIC);
        w.bytes(self.user_id.as_bytes())
            .u32(self.samples as u32)
            .u32(self.coefficients.len() as u32)
            .f64s(&self.coefficients);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EigenError> {
        let mut r = binio::Reader::new(bytes, TEMPLATE_MAGIC)?;
        let user_id = std::str::from_utf8(r.bytes()?)
            .map_err(|e| BinError::Invalid(format!("user id: {e}")))?
            .to_owned();
        let samples = r.u32()? as usize;
        let k = r.u32()? as usize;
        let coefficients = r.f64s(k)?;
        r.finish()?;
        Ok(Self {
            user_id,
            coefficients,
            samples,
        })
    }
}

pub fn enroll_vectors(
    model: &EigenModel,
    user_id: &str,
    vectors: &[Vec<f64>],
    range: EnrollmentRange,
) -> Result<FaceTemplate, EigenError> {
    range.check(vectors.len())?;
    let mut mean = vec![0.0; model.components()];
    for v in vectors {
        for (a, c) in mean.iter_mut().zip(model.project_vector(v)?) {
            *a += c;
        }
    }
    mean.iter_mut().for_each(|a| *a /= vectors.len() as f64);
    Ok(FaceTemplate {
        user_id: user_id.to_owned(),
        coefficients: mean,
        samples: vectors.len(),
    })
}

pub fn enroll_face(
    model: &EigenModel,
    user_id: &str,
    faces: &[CanonicalFace],
    range: EnrollmentRange,
) -> Result<FaceTemplate, EigenError> {
    let vectors: Vec<Vec<f64>> = faces.iter().map(CanonicalFace::to_vector).collect();
    enroll_vectors(model, user_id, &vectors, range)
}

pub fn coefficient_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceMatch {
    pub user_id: String,
    pub distance: f64,
    pub accept: bool,
}

/// Distance from projected probe coefficients to every template, in input order.
pub fn score_all(templates: &[FaceTemplate], coefficients: &[f64]) -> Result<Vec<(String, f64)>, EigenError> {
    templates
        .iter()
        .map(|t| {
            if t.coefficients.len() != coefficients.len() {
                return Err(EigenError::Dimension {
                    expected: coefficients.len(),
                    found: t.coefficients.len(),
                });
            }
            Ok((t.user_id.clone(), coefficient_distance(&t.coefficients, coefficients)))
        })
        .collect()
}

pub fn match_coefficients(
    templates: &[FaceTemplate],
    coefficients: &[f64],
    threshold: f64,
) -> Result<FaceMatch, EigenError> {
    if templates.is_empty() {
        return Err(EigenError::NoTemplates);
    }
    let (user_id, distance) = crate::vq_model::best_of(score_all(templates, coefficients)?).expect("non-empty");
    Ok(FaceMatch {
        user_id,
        distance,
        accept: distance < threshold,
    })
}

pub fn match_face(
    model: &EigenModel,
    templates: &[FaceTemplate],
    probe: &CanonicalFace,
    threshold: f64,
) -> Result<FaceMatch, EigenError> {
    if templates.is_empty() {
        return Err(EigenError::NoTemplates);
    }
    match_coefficients(templates, &model.project(probe)?, threshold)
}
