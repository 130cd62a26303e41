//! Canonical face normalization: eye-based alignment and crop, split histogram
//! equalization, bilateral smoothing and an elliptical mask, producing a
//! fixed-size face ready for Eigenfaces.

use thiserror::Error;

use crate::imaging::{
    affine_warp, bilateral_filter, equalize_histogram, AffineTransform, BilateralParams, GrayImage,
};

pub const FACE_SIZE: usize = 70;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("degenerate eye geometry: {0}")]
    DegenerateGeometry(String),
    #[error("expected a {expected}x{expected} image, got {width}x{height}")]
    Size {
        expected: usize,
        width: usize,
        height: usize,
    },
    #[error("image too narrow for split equalization (width {0} < 4)")]
    TooNarrow(usize),
}

pub type Point = (f64, f64);

/// Eye centers in continuous source-image coordinates; left is image-left.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EyePair {
    pub left: Point,
    pub right: Point,
}

impl EyePair {
    pub fn new(left: Point, right: Point) -> Self {
        Self { left, right }
    }

    /// Parses the `LX LY RX RY` sidecar line.
    pub fn parse_sidecar(text: &str) -> Option<Self> {
        let v: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse().ok())
            .collect::<Option<_>>()?;
        match v[..] {
            [lx, ly, rx, ry] if v.iter().all(|x| x.is_finite()) => Some(Self::new((lx, ly), (rx, ry))),
            _ => None,
        }
    }

    pub fn to_sidecar(&self) -> String {
        format!(
            "{} {} {} {}\n",
            self.left.0, self.left.1, self.right.0, self.right.1
        )
    }

    pub fn midpoint(&self) -> Point {
        (
            (self.left.0 + self.right.0) / 2.0,
            (self.left.1 + self.right.1) / 2.0,
        )
    }

    pub fn distance(&self) -> f64 {
        (self.right.0 - self.left.0).hypot(self.right.1 - self.left.1)
    }
}

/// Output placement of the eyes and mask, as fractions of the face size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub size: usize,
    pub left_eye_x: f64,
    pub right_eye_x: f64,
    pub eye_y: f64,
    pub ellipse_center: Point,
    pub ellipse_semi_axes: (f64, f64),
    pub mask_fill: u8,
    pub bilateral: BilateralParams,
}

impl Default for FaceGeometry {
    fn default() -> Self {
        Self {
            size: FACE_SIZE,
            left_eye_x: 0.19,
            right_eye_x: 0.81,
            eye_y: 0.30,
            ellipse_center: (35.0, 28.0),
            ellipse_semi_axes: (35.0 * 0.85, 60.0 * 0.8),
            mask_fill: 128,
            bilateral: BilateralParams::default(),
        }
    }
}

impl FaceGeometry {
    pub fn anchors(&self) -> EyePair {
        let s = self.size as f64;
        EyePair::new(
            (self.left_eye_x * s, self.eye_y * s),
            (self.right_eye_x * s, self.eye_y * s),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentParams {
    /// Angle of the eye line off the x-axis, degrees.
    pub angle_deg: f64,
    pub scale: f64,
    /// Source eye midpoint, the pivot of the warp.
    pub pivot: Point,
    /// Offset that carries the pivot onto the anchor midpoint.
    pub translation: Point,
    pub out_size: usize,
}

impl AlignmentParams {
    /// The warp that levels the eyes and places them on their anchors.
    pub fn transform(&self) -> AffineTransform {
        AffineTransform {
            angle_deg: -self.angle_deg,
            scale: self.scale,
            center: self.pivot,
            translation: self.translation,
        }
    }
}

pub fn compute_alignment(eyes: &EyePair, geometry: &FaceGeometry) -> Result<AlignmentParams, PipelineError> {
    let dist = eyes.distance();
    if !(dist > 1e-9) {
        return Err(PipelineError::DegenerateGeometry("eye centers coincide".into()));
    }
    if eyes.right.0 <= eyes.left.0 {
        return Err(PipelineError::DegenerateGeometry(
            "right eye must lie to the right of the left eye".into(),
        ));
    }
    let anchors = geometry.anchors();
    let angle_deg = (eyes.right.1 - eyes.left.1)
        .atan2(eyes.right.0 - eyes.left.0)
        .to_degrees();
    let pivot = eyes.midpoint();
    let target = anchors.midpoint();
    Ok(AlignmentParams {
        angle_deg,
        scale: anchors.distance() / dist,
        pivot,
        translation: (target.0 - pivot.0, target.1 - pivot.1),
        out_size: geometry.size,
    })
}

/// Equalizes the left half, right half and whole image separately, then
/// blends them column by column: left quarter from the left equalization,
/// right quarter from the right one, and linear ramps through the whole-image
/// equalization in between.
pub fn split_equalize(img: &GrayImage) -> Result<GrayImage, PipelineError> {
    let w = img.width();
    if w < 4 {
        return Err(PipelineError::TooNarrow(w));
    }
    let h = img.height();
    let mid = w / 2;
    let q1 = w / 4;
    let q3 = 3 * w / 4;
    let whole = equalize_histogram(img);
    let left = equalize_histogram(&img.crop(0, 0, mid, h));
    let right = equalize_histogram(&img.crop(mid, 0, w - mid, h));

    Ok(GrayImage::from_fn(w, h, |x, y| {
        let f = whole.get(x, y) as f64;
        let v = if x < q1 {
            left.get(x, y) as f64
        } else if x < mid {
            let t = (x - q1) as f64 / (mid - q1) as f64;
            (1.0 - t) * left.get(x, y) as f64 + t * f
        } else if x < q3 {
            let t = (x - mid) as f64 / (q3 - mid) as f64;
            (1.0 - t) * f + t * right.get(x - mid, y) as f64
        } else {
            right.get(x - mid, y) as f64
        };
        v.round() as u8
    }))
}

pub fn apply_elliptical_mask(img: &GrayImage, geometry: &FaceGeometry) -> Result<GrayImage, PipelineError> {
    check_size(img, geometry.size)?;
    let (cx, cy) = geometry.ellipse_center;
    let (a, b) = geometry.ellipse_semi_axes;
    Ok(GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let dx = (x as f64 + 0.5 - cx) / a;
        let dy = (y as f64 + 0.5 - cy) / b;
        if dx * dx + dy * dy <= 1.0 {
            img.get(x, y)
        } else {
            geometry.mask_fill
        }
    }))
}

fn check_size(img: &GrayImage, size: usize) -> Result<(), PipelineError> {
    if img.width() != size || img.height() != size {
        return Err(PipelineError::Size {
            expected: size,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFace {
    image: GrayImage,
    pub source_id: String,
    pub eyes: Option<EyePair>,
}

impl CanonicalFace {
    /// Wraps an already-normalized face; it must be `FACE_SIZE` square.
    pub fn new(image: GrayImage, source_id: impl Into<String>) -> Result<Self, PipelineError> {
        check_size(&image, FACE_SIZE)?;
        Ok(Self {
            image,
            source_id: source_id.into(),
            eyes: None,
        })
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.image.pixels().iter().map(|&p| p as f64).collect()
    }
}

/// Full normalization chain: align and crop → split equalization → bilateral
/// smoothing → elliptical mask.
pub fn preprocess_face(
    img: &GrayImage,
    eyes: &EyePair,
    geometry: &FaceGeometry,
    source_id: &str,
) -> Result<CanonicalFace, PipelineError> {
    let align = compute_alignment(eyes, geometry)?;
    let warped = affine_warp(img, &align.transform(), geometry.size, geometry.size);
    let equalized = split_equalize(&warped)?;
    let smoothed = bilateral_filter(&equalized, geometry.bilateral);
    let masked = apply_elliptical_mask(&smoothed, geometry)?;
    Ok(CanonicalFace {
        image: masked,
        source_id: source_id.to_string(),
        eyes: Some(*eyes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{render_face, FaceIdentity};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn level_eyes_alignment() {
        let g = FaceGeometry::default();
        let a = compute_alignment(&EyePair::new((20.0, 30.0), (50.0, 30.0)), &g).unwrap();
        assert_eq!(a.angle_deg, 0.0);
        assert!((a.scale - 0.62 * 70.0 / 30.0).abs() < 1e-12);
        assert!((a.scale - 1.4467).abs() < 1e-4);
    }

    #[test]
    fn diagonal_eyes_are_45_degrees() {
        let a = compute_alignment(&EyePair::new((0.0, 0.0), (10.0, 10.0)), &FaceGeometry::default()).unwrap();
        assert!((a.angle_deg - 45.0).abs() < 1e-12);
    }

    #[test]
    fn anchors_are_a_fixed_point() {
        let g = FaceGeometry::default();
        let a = compute_alignment(&g.anchors(), &g).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-12);
        assert_eq!(a.angle_deg, 0.0);
        assert!(a.translation.0.abs() < 1e-12 && a.translation.1.abs() < 1e-12);
    }

    #[test]
    fn coincident_or_swapped_eyes_rejected() {
        let g = FaceGeometry::default();
        assert!(matches!(
            compute_alignment(&EyePair::new((5.0, 5.0), (5.0, 5.0)), &g),
            Err(PipelineError::DegenerateGeometry(_))
        ));
        assert!(compute_alignment(&EyePair::new((50.0, 5.0), (10.0, 5.0)), &g).is_err());
    }

    #[test]
    fn warped_eyes_land_on_anchors() {
        let g = FaceGeometry::default();
        let eyes = EyePair::new((41.3, 60.2), (97.9, 51.0));
        let t = compute_alignment(&eyes, &g).unwrap().transform();
        let (l, r) = (t.apply(eyes.left), t.apply(eyes.right));
        let anchors = g.anchors();
        assert!((l.1 - r.1).abs() < 1e-9);
        let mid = ((l.0 + r.0) / 2.0, (l.1 + r.1) / 2.0);
        let target = anchors.midpoint();
        assert!((mid.0 - target.0).hypot(mid.1 - target.1) < 0.5);
        assert!((l.0 - anchors.left.0).abs() < 1e-9 && (r.0 - anchors.right.0).abs() < 1e-9);
    }

    #[test]
    fn split_equalize_uniform() {
        let img = GrayImage::filled(20, 10, 90);
        assert_eq!(split_equalize(&img).unwrap(), GrayImage::filled(20, 10, 0));
        assert!(split_equalize(&GrayImage::filled(3, 3, 1)).is_err());
    }

    fn two_tone(w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        GrayImage::from_fn(w, h, |x, _| {
            if x < w / 2 {
                rng.random_range(0..=60)
            } else {
                rng.random_range(200..=255)
            }
        })
    }

    #[test]
    fn left_quarter_matches_left_equalization() {
        let img = two_tone(40, 16);
        let out = split_equalize(&img).unwrap();
        let left = equalize_histogram(&img.crop(0, 0, 20, 16));
        for y in 0..16 {
            for x in 0..10 {
                assert_eq!(out.get(x, y), left.get(x, y));
            }
        }
    }

    fn column_means(img: &GrayImage) -> Vec<f64> {
        (0..img.width())
            .map(|x| (0..img.height()).map(|y| img.get(x, y) as f64).sum::<f64>() / img.height() as f64)
            .collect()
    }

    #[test]
    fn blended_seam_is_smaller_than_naive() {
        let (w, h) = (40, 16);
        let img = GrayImage::from_fn(w, h, |x, y| (x * 6 + y % 3) as u8);
        let left = equalize_histogram(&img.crop(0, 0, w / 2, h));
        let right = equalize_histogram(&img.crop(w / 2, 0, w / 2, h));
        let naive = GrayImage::from_fn(w, h, |x, y| {
            if x < w / 2 {
                left.get(x, y)
            } else {
                right.get(x - w / 2, y)
            }
        });
        let blended = split_equalize(&img).unwrap();
        let jump = |m: &[f64]| (m[w / 2] - m[w / 2 - 1]).abs();
        let (jn, jb) = (jump(&column_means(&naive)), jump(&column_means(&blended)));
        assert!(jb < jn, "blended seam {jb} vs naive {jn}");
    }

    #[test]
    fn mask_corners_and_center() {
        let g = FaceGeometry::default();
        let img = GrayImage::filled(70, 70, 200);
        let out = apply_elliptical_mask(&img, &g).unwrap();
        assert_eq!(out.get(0, 0), 128);
        assert_eq!(out.get(69, 0), 128);
        assert_eq!(out.get(35, 28), 200);
        assert!(apply_elliptical_mask(&GrayImage::filled(60, 70, 0), &g).is_err());
    }

    #[test]
    fn mask_is_mirror_symmetric() {
        let g = FaceGeometry::default();
        let img = GrayImage::from_fn(70, 70, |x, y| if (x + y) % 2 == 0 { 10 } else { 240 });
        let count = |m: &GrayImage| m.pixels().iter().filter(|&&p| p == 128).count();
        let a = apply_elliptical_mask(&img, &g).unwrap();
        let b = apply_elliptical_mask(&img.mirrored(), &g).unwrap();
        assert!(count(&a) > 0);
        assert_eq!(count(&a), count(&b));
        assert_eq!(a.mirrored().pixels().iter().map(|&p| p == 128).collect::<Vec<_>>(),
                   b.pixels().iter().map(|&p| p == 128).collect::<Vec<_>>());
    }

    fn sample_face(seed: u64) -> (GrayImage, EyePair) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id = FaceIdentity::random(&mut rng);
        render_face(&id, &mut rng, 140)
    }

    #[test]
    fn canonical_face_is_70_square_and_deterministic() {
        let (img, eyes) = sample_face(5);
        let g = FaceGeometry::default();
        let a = preprocess_face(&img, &eyes, &g, "x").unwrap();
        let b = preprocess_face(&img, &eyes, &g, "x").unwrap();
        assert_eq!((a.image().width(), a.image().height()), (70, 70));
        assert_eq!(a, b);
    }

    #[test]
    fn rotated_input_normalizes_to_the_same_face() {
        let (img, eyes) = sample_face(9);
        let g = FaceGeometry::default();
        let rot = AffineTransform {
            angle_deg: 10.0,
            scale: 1.0,
            center: (70.0, 70.0),
            translation: (0.0, 0.0),
        };
        let rotated = affine_warp(&img, &rot, 140, 140);
        let rotated_eyes = EyePair::new(rot.apply(eyes.left), rot.apply(eyes.right));
        let a = preprocess_face(&img, &eyes, &g, "a").unwrap();
        let b = preprocess_face(&rotated, &rotated_eyes, &g, "b").unwrap();
        let mad = a
            .image()
            .pixels()
            .iter()
            .zip(b.image().pixels())
            .map(|(&p, &q)| p.abs_diff(q) as f64)
            .sum::<f64>()
            / (70.0 * 70.0);
        assert!(mad <= 6.0, "mean absolute difference {mad}");
    }

    #[test]
    fn sidecar_round_trip() {
        let e = EyePair::new((12.5, 40.25), (60.0, 41.0));
        assert_eq!(EyePair::parse_sidecar(&e.to_sidecar()), Some(e));
        assert_eq!(EyePair::parse_sidecar("1 2 3"), None);
        assert_eq!(EyePair::parse_sidecar("1 2 3 x"), None);
    }

    proptest! {
        #[test]
        fn split_equalize_is_within_envelope(w in 4usize..30, h in 1usize..10, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = GrayImage::from_fn(w, h, |_, _| rng.random());
            let out = split_equalize(&img).unwrap();
            prop_assert_eq!((out.width(), out.height()), (w, h));
            let whole = equalize_histogram(&img);
            let left = equalize_histogram(&img.crop(0, 0, w / 2, h));
            let right = equalize_histogram(&img.crop(w / 2, 0, w - w / 2, h));
            for y in 0..h {
                for x in 0..w {
                    let side = if x < w / 2 { left.get(x, y) } else { right.get(x - w / 2, y) };
                    let f = whole.get(x, y);
                    let (lo, hi) = (side.min(f), side.max(f));
                    prop_assert!(out.get(x, y) >= lo && out.get(x, y) <= hi);
                }
            }
        }
    }
}
