//! Score-level fusion: double-sigmoid normalization of raw distances,
//! weighted sum of the normalized scores, and the final threshold rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("non-finite raw score {0}")]
    NonFinite(f64),
    #[error("invalid fusion parameters: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Voice,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Face => "face",
            Modality::Voice => "voice",
        })
    }
}

/// Double-sigmoid parameters and fusion weight for one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityParams {
    pub tau: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub weight: f64,
}

impl ModalityParams {
    pub const FACE: Self = Self {
        tau: 2800.0,
        alpha1: 200.0,
        alpha2: 3400.0,
        weight: 0.35,
    };
    pub const VOICE: Self = Self {
        tau: 2.6,
        alpha1: 0.3,
        alpha2: 3.1,
        weight: 0.65,
    };

    pub fn validate(&self) -> Result<(), FusionError> {
        if !self.tau.is_finite() {
            return Err(FusionError::Config(format!("tau {} is not finite", self.tau)));
        }
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite() && self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(FusionError::Config(format!(
                "boundaries must be positive, got {} and {}",
                self.alpha1, self.alpha2
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(FusionError::Config(format!("weight {} outside [0, 1]", self.weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub face: ModalityParams,
    pub voice: ModalityParams,
    pub accept_threshold: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            face: ModalityParams::FACE,
            voice: ModalityParams::VOICE,
            accept_threshold: 0.5,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        self.face.validate()?;
        self.voice.validate()?;
        check_weights(&[self.face.weight, self.voice.weight])?;
        if !self.accept_threshold.is_finite() {
            return Err(FusionError::Config("accept threshold is not finite".into()));
        }
        Ok(())
    }

    pub fn modality(&self, m: Modality) -> &ModalityParams {
        match m {
            Modality::Face => &self.face,
            Modality::Voice => &self.voice,
        }
    }
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

fn check_weights(weights: &[f64]) -> Result<(), FusionError> {
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(FusionError::Config(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Maps a raw distance into (0, 1); `s = τ` maps to exactly 0.5.
///
/// The result is clamped away from 0 and 1 so that extreme distances still
/// produce a value strictly inside the open interval.
pub fn normalize_double_sigmoid(s: f64, p: &ModalityParams) -> Result<f64, FusionError> {
    if !s.is_finite() {
        return Err(FusionError::NonFinite(s));
    }
    let alpha = if s < p.tau { p.alpha1 } else { p.alpha2 };
    let phi = 1.0 / (1.0 + (-2.0 * (s - p.tau) / alpha).exp());
    Ok(phi.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// `Σ ωᵢ Φᵢ` over `(Φᵢ, ωᵢ)` pairs.
pub fn fuse_wss(normalized: &[(f64, f64)]) -> Result<f64, FusionError> {
    if normalized.is_empty() {
        return Err(FusionError::Config("no scores to fuse".into()));
    }
    let weights: Vec<f64> = normalized.iter().map(|&(_, w)| w).collect();
    check_weights(&weights)?;
    Ok(normalized.iter().map(|&(phi, w)| w * phi).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub modality: Modality,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionDecision {
    pub fused: f64,
    pub accept: bool,
    pub scores: Vec<MatchScore>,
}

pub fn decide(fused: f64, threshold: f64, scores: Vec<MatchScore>) -> FusionDecision {
    FusionDecision {
        fused,
        accept: fused < threshold,
        scores,
    }
}

/// Normalizes both raw distances, fuses them and applies the threshold.
pub fn fuse_pair(face_distance: f64, voice_distance: f64, params: &FusionParams) -> Result<FusionDecision, FusionError> {
    let face = MatchScore {
        modality: Modality::Face,
        raw: face_distance,
        normalized: normalize_double_sigmoid(face_distance, &params.face)?,
    };
    let voice = MatchScore {
        modality: Modality::Voice,
        raw: voice_distance,
        normalized: normalize_double_sigmoid(voice_distance, &params.voice)?,
    };
    let fused = fuse_wss(&[(face.normalized, params.face.weight), (voice.normalized, params.voice.weight)])?;
    Ok(decide(fused, params.accept_threshold, vec![face, voice]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> impl Strategy<Value = ModalityParams> {
        (-1e4f64..1e4, 1e-3f64..1e4, 1e-3f64..1e4).prop_map(|(tau, alpha1, alpha2)| ModalityParams {
            tau,
            alpha1,
            alpha2,
            weight: 0.5,
        })
    }

    #[test]
    fn tau_maps_to_half() {
        for p in [ModalityParams::FACE, ModalityParams::VOICE] {
            assert_eq!(normalize_double_sigmoid(p.tau, &p).unwrap(), 0.5);
        }
    }

    #[test]
    fn worked_values() {
        let v = normalize_double_sigmoid(2.0, &ModalityParams::VOICE).unwrap();
        assert!((v - 1.0 / (1.0 + 4f64.exp())).abs() < 1e-12);
        assert!((v - 0.01799).abs() < 1e-4);
        let f = normalize_double_sigmoid(4500.0, &ModalityParams::FACE).unwrap();
        assert!((f - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(normalize_double_sigmoid(f64::NAN, &ModalityParams::FACE).is_err());
        assert!(normalize_double_sigmoid(f64::INFINITY, &ModalityParams::FACE).is_err());
    }

    #[test]
    fn extremes_stay_open() {
        let p = ModalityParams::VOICE;
        let lo = normalize_double_sigmoid(-1e6, &p).unwrap();
        let hi = normalize_double_sigmoid(1e9, &p).unwrap();
        assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn wss_examples() {
        assert_eq!(fuse_wss(&[(0.5, 0.35), (0.5, 0.65)]).unwrap(), 0.5);
        assert!((fuse_wss(&[(0.2, 0.35), (0.4, 0.65)]).unwrap() - 0.33).abs() < 1e-12);
        assert_eq!(fuse_wss(&[(0.123, 1.0)]).unwrap(), 0.123);
        assert!(fuse_wss(&[(0.2, 0.5), (0.4, 0.6)]).is_err());
        assert!(fuse_wss(&[]).is_err());
    }

    #[test]
    fn boundary_rejects() {
        let d = fuse_pair(2800.0, 2.6, &FusionParams::default()).unwrap();
        assert_eq!(d.fused, 0.5);
        assert!(!d.accept);
        let d = fuse_pair(0.0, 0.0, &FusionParams::default()).unwrap();
        assert!(d.accept && d.fused < 1e-6);
    }

    #[test]
    fn default_params_are_valid() {
        FusionParams::default().validate().unwrap();
        let mut bad = FusionParams::default();
        bad.face.weight = 0.4;
        assert!(bad.validate().is_err());
        bad = FusionParams::default();
        bad.voice.alpha1 = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn near_linear_around_tau() {
        let p = ModalityParams::FACE;
        let f = |s: f64| normalize_double_sigmoid(s, &p).unwrap();
        let h = 10.0;
        let mut s = p.tau - p.alpha1 / 2.0 + h;
        while s < p.tau - h {
            let second = (f(s + h) - 2.0 * f(s) + f(s - h)).abs();
            let first = (f(s + h) - f(s - h)).abs() / 2.0;
            assert!(second < 0.2 * first, "s={s}");
            s += h;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn strictly_increasing_in_open_interval(p in params(), a in -1e4f64..1e4, d in 1e-6f64..1.0) {
            // keep within the range where the logistic is not saturated in f64
            let b = a + d * p.alpha1.min(p.alpha2);
            let fa = normalize_double_sigmoid(a, &p).unwrap();
            let fb = normalize_double_sigmoid(b, &p).unwrap();
            prop_assert!(fa > 0.0 && fa < 1.0);
            prop_assert!(fb >= fa);
            let alpha = if a < p.tau { p.alpha1 } else { p.alpha2 };
            if ((a - p.tau) / alpha).abs() < 10.0 {
                prop_assert!(fb > fa);
            }
        }

        #[test]
        fn continuous_at_tau(p in params()) {
            let eps = 1e-9 * p.alpha1.min(p.alpha2);
            let below = normalize_double_sigmoid(p.tau - eps, &p).unwrap();
            let above = normalize_double_sigmoid(p.tau + eps, &p).unwrap();
            prop_assert!((below - 0.5).abs() < 1e-6 && (above - 0.5).abs() < 1e-6);
        }

        #[test]
        fn fused_within_component_bounds(a in 0.0f64..1.0, b in 0.0f64..1.0, w in 0.0f64..1.0) {
            let fused = fuse_wss(&[(a, w), (b, 1.0 - w)]).unwrap();
            prop_assert!(fused >= a.min(b) - 1e-15 && fused <= a.max(b) + 1e-15);
        }

        #[test]
        fn voice_weight_shift(a in 0.0f64..1.0, b in 0.0f64..0.5, delta in 0.0f64..0.5) {
            let w = fuse_wss(&[(a, 0.35), (b, 0.65)]).unwrap();
            let w2 = fuse_wss(&[(a, 0.35), (b + delta, 0.65)]).unwrap();
            prop_assert!((w2 - w - 0.65 * delta).abs() < 1e-12);
        }

        #[test]
        fn accept_set_is_downward_closed(
            f in 0.0f64..8000.0, v in 0.0f64..8.0, df in 0.0f64..8000.0, dv in 0.0f64..8.0
        ) {
            let params = FusionParams::default();
            let outer = fuse_pair(f, v, &params).unwrap();
            let inner = fuse_pair((f - df).max(0.0), (v - dv).max(0.0), &params).unwrap();
            prop_assert!(!outer.accept || inner.accept);
        }
    }
}
