//! Sliding-window Haar cascade inference over an integral image, eye
//! localization inside fixed left/right search regions, and the face
//! validity rule used when indexing datasets.
//!
//! Cascades are stored in a small line-oriented text format:
//!
//! ```text
//! CASCADE v1
//! window W H
//! stages S
//! stage THRESH NWEAK
//! weak FTHRESH LEAF_LO LEAF_HI NRECTS
//! rect X Y W H WEIGHT
//! ```
//!
//! Blank lines and `#` comments are ignored.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::imaging::{GrayImage, IntegralImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("cascade parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid cascade: {0}")]
    InvalidModel(String),
    #[error("invalid detection parameters: {0}")]
    Parameters(String),
    #[error("{0} eye not found")]
    EyeNotFound(Side),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub threshold: f64,
    pub leaf_lo: f64,
    pub leaf_hi: f64,
    pub rects: Vec<WeightedRect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub threshold: f64,
    pub weak: Vec<WeakClassifier>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub window_w: u32,
    pub window_h: u32,
    pub stages: Vec<Stage>,
}

impl CascadeModel {
    pub fn new(window_w: u32, window_h: u32, stages: Vec<Stage>) -> Result<Self, DetectError> {
        let model = Self {
            window_w,
            window_h,
            stages,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidModel(m));
        if self.window_w == 0 || self.window_h == 0 {
            return bad("window must be non-empty".into());
        }
        if self.stages.is_empty() {
            return bad("cascade has no stages".into());
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.weak.is_empty() {
                return bad(format!("stage {si} has no weak classifiers"));
            }
            for weak in &stage.weak {
                if weak.rects.is_empty() {
                    return bad(format!("stage {si} has a weak classifier without rects"));
                }
                for r in &weak.rects {
                    if !rect_fits(r, self.window_w, self.window_h) {
                        return bad(format!("stage {si}: rect {r:?} leaves the window"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether the base-size window at `(x, y)` passes every stage.
    pub fn classify_window(&self, images: &DetectionImage, x: usize, y: usize) -> bool {
        let scaled = ScaledCascade::new(self, 1.0);
        scaled.passes(images, x, y)
    }
}

fn rect_fits(r: &WeightedRect, w: u32, h: u32) -> bool {
    r.w > 0 && r.h > 0 && r.x + r.w <= w && r.y + r.h <= h
}

pub fn parse_cascade(text: &str) -> Result<CascadeModel, DetectError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut last_line = 0usize;
    let mut next = |expect: &str| -> Result<(usize, Vec<&str>), DetectError> {
        match lines.next() {
            Some((n, l)) => {
                last_line = n;
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks[0] != expect {
                    return Err(DetectError::Parse {
                        line: n,
                        message: format!("expected '{expect}', found '{}'", toks[0]),
                    });
                }
                Ok((n, toks))
            }
            None => Err(DetectError::Parse {
                line: last_line + 1,
                message: format!("unexpected end of input, expected '{expect}'"),
            }),
        }
    };

    let (n, header) = next("CASCADE")?;
    if header.len() != 2 || header[1] != "v1" {
        return Err(DetectError::Parse {
            line: n,
            message: format!("unsupported cascade version '{}'", header[1..].join(" ")),
        });
    }
    let (n, toks) = next("window")?;
    let [window_w, window_h]: [u32; 2] = fields(n, &toks)?;
    if window_w == 0 || window_h == 0 {
        return Err(parse_err(n, "window dimensions must be positive"));
    }
    let (n, toks) = next("stages")?;
    let [stage_count]: [usize; 1] = fields(n, &toks)?;
    if stage_count == 0 {
        return Err(parse_err(n, "cascade needs at least one stage"));
    }

    let mut stages = Vec::with_capacity(stage_count);
    for _ in 0..stage_count {
        let (n, toks) = next("stage")?;
        let (threshold, weak_count): (f64, usize) = (field(n, &toks, 1)?, field(n, &toks, 2)?);
        arity(n, &toks, 3)?;
        if weak_count == 0 {
            return Err(parse_err(n, "stage needs at least one weak classifier"));
        }
        let mut weak = Vec::with_capacity(weak_count);
        for _ in 0..weak_count {
            let (n, toks) = next("weak")?;
            arity(n, &toks, 5)?;
            let threshold: f64 = field(n, &toks, 1)?;
            let leaf_lo: f64 = field(n, &toks, 2)?;
            let leaf_hi: f64 = field(n, &toks, 3)?;
            let rect_count: usize = field(n, &toks, 4)?;
            if !(1..=3).contains(&rect_count) {
                return Err(parse_err(n, "weak classifier needs 1 to 3 rects"));
            }
            let mut rects = Vec::with_capacity(rect_count);
            for _ in 0..rect_count {
                let (n, toks) = next("rect")?;
                arity(n, &toks, 6)?;
                let r = WeightedRect {
                    x: field(n, &toks, 1)?,
                    y: field(n, &toks, 2)?,
                    w: field(n, &toks, 3)?,
                    h: field(n, &toks, 4)?,
                    weight: field(n, &toks, 5)?,
                };
                if !rect_fits(&r, window_w, window_h) {
                    return Err(parse_err(
                        n,
                        format!("rect {} {} {} {} lies outside the {window_w}x{window_h} window", r.x, r.y, r.w, r.h),
                    ));
                }
                rects.push(r);
            }
            weak.push(WeakClassifier {
                threshold,
                leaf_lo,
                leaf_hi,
                rects,
            });
        }
        stages.push(Stage { threshold, weak });
    }
    if let Some((n, l)) = lines.next() {
        return Err(parse_err(n, format!("trailing content '{l}' (stage count mismatch?)")));
    }
    Ok(CascadeModel {
        window_w,
        window_h,
        stages,
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> DetectError {
    DetectError::Parse {
        line,
        message: message.into(),
    }
}

fn arity(line: usize, toks: &[&str], n: usize) -> Result<(), DetectError> {
    if toks.len() != n {
        return Err(parse_err(
            line,
            format!("'{}' takes {} values, found {}", toks[0], n - 1, toks.len() - 1),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(line: usize, toks: &[&str], i: usize) -> Result<T, DetectError> {
    toks.get(i)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(line, format!("bad or missing value #{i} for '{}'", toks[0])))
}

fn fields<T: std::str::FromStr, const N: usize>(line: usize, toks: &[&str]) -> Result<[T; N], DetectError> {
    arity(line, toks, N + 1)?;
    let mut out = Vec::with_capacity(N);
    for i in 1..=N {
        out.push(field(line, toks, i)?);
    }
    Ok(out.try_into().ok().expect("length checked"))
}

pub fn serialize_cascade(model: &CascadeModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "CASCADE v1");
    let _ = writeln!(s, "window {} {}", model.window_w, model.window_h);
    let _ = writeln!(s, "stages {}", model.stages.len());
    for stage in &model.stages {
        let _ = writeln!(s, "stage {:?} {}", stage.threshold, stage.weak.len());
        for weak in &stage.weak {
            let _ = writeln!(
                s,
                "weak {:?} {:?} {:?} {}",
                weak.threshold,
                weak.leaf_lo,
                weak.leaf_hi,
                weak.rects.len()
            );
            for r in &weak.rects {
                let _ = writeln!(s, "rect {} {} {} {} {:?}", r.x, r.y, r.w, r.h, r.weight);
            }
        }
    }
    s
}

/// Sum and squared-sum tables for one image.
pub struct DetectionImage {
    pub sums: IntegralImage,
    pub squares: IntegralImage,
}

impl DetectionImage {
    pub fn new(img: &GrayImage) -> Self {
        Self {
            sums: IntegralImage::new(img),
            squares: IntegralImage::squared(img),
        }
    }

    pub fn width(&self) -> usize {
        self.sums.width()
    }

    pub fn height(&self) -> usize {
        self.sums.height()
    }

    /// Standard deviation of the window, floored at 1.
    pub fn window_std(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let area = (w * h) as f64;
        let mean = self.sums.rect_sum(x, y, w, h) as f64 / area;
        let var = self.squares.rect_sum(x, y, w, h) as f64 / area - mean * mean;
        var.max(0.0).sqrt().max(1.0)
    }
}

struct ScaledRect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    weight: f64,
}

struct ScaledCascade<'a> {
    model: &'a CascadeModel,
    win_w: usize,
    win_h: usize,
    rects: Vec<Vec<Vec<ScaledRect>>>,
}

impl<'a> ScaledCascade<'a> {
    fn new(model: &'a CascadeModel, scale: f64) -> Self {
        let win_w = (model.window_w as f64 * scale).round() as usize;
        let win_h = (model.window_h as f64 * scale).round() as usize;
        let rects = model
            .stages
            .iter()
            .map(|stage| {
                stage
                    .weak
                    .iter()
                    .map(|weak| {
                        weak.rects
                            .iter()
                            .map(|r| {
                                let x = ((r.x as f64 * scale).round() as usize).min(win_w - 1);
                                let y = ((r.y as f64 * scale).round() as usize).min(win_h - 1);
                                let w = ((r.w as f64 * scale).round() as usize).clamp(1, win_w - x);
                                let h = ((r.h as f64 * scale).round() as usize).clamp(1, win_h - y);
                                // rounding changes rect areas; rescale the weight so
                                // each rect still contributes as if exactly scaled
                                let nominal = (r.w * r.h) as f64 * scale * scale;
                                ScaledRect {
                                    x,
                                    y,
                                    w,
                                    h,
                                    weight: r.weight * nominal / (w * h) as f64,
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            model,
            win_w,
            win_h,
            rects,
        }
    }

    fn passes(&self, images: &DetectionImage, x: usize, y: usize) -> bool {
        let norm = (self.win_w * self.win_h) as f64 * images.window_std(x, y, self.win_w, self.win_h);
        for (stage, stage_rects) in self.model.stages.iter().zip(&self.rects) {
            let mut total = 0.0;
            for (weak, rects) in stage.weak.iter().zip(stage_rects) {
                let raw: f64 = rects
                    .iter()
                    .map(|r| r.weight * images.sums.rect_sum(x + r.x, y + r.y, r.w, r.h) as f64)
                    .sum();
                total += if raw / norm < weak.threshold {
                    weak.leaf_lo
                } else {
                    weak.leaf_hi
                };
            }
            if total < stage.threshold {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn intersection(&self, other: &Rect) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) * (y1 - y0)
        }
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection(other) as f64;
        inter / ((self.area() + other.area()) as f64 - inter).max(f64::MIN_POSITIVE)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub rect: Rect,
    /// Number of raw window hits merged into this detection.
    pub neighbors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub min_neighbors: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            min_neighbors: 3,
        }
    }
}

/// All raw window hits over the scale pyramid, before grouping.
pub fn raw_hits(img: &GrayImage, model: &CascadeModel, scale_factor: f64) -> Vec<Rect> {
    let images = DetectionImage::new(img);
    let mut hits = Vec::new();
    let mut scale = 1.0f64;
    loop {
        let scaled = ScaledCascade::new(model, scale);
        if scaled.win_w > img.width() || scaled.win_h > img.height() {
            break;
        }
        let step = (scale.round() as usize).max(1);
        let mut y = 0;
        while y + scaled.win_h <= img.height() {
            let mut x = 0;
            while x + scaled.win_w <= img.width() {
                if scaled.passes(&images, x, y) {
                    hits.push(Rect {
                        x,
                        y,
                        w: scaled.win_w,
                        h: scaled.win_h,
                    });
                }
                x += step;
            }
            y += step;
        }
        scale *= scale_factor;
    }
    hits
}

/// Multi-scale detection. Raw hits are linked whenever their IoU is at least
/// 0.5; each connected group becomes one detection at the group's mean rect.
pub fn detect_objects(
    img: &GrayImage,
    model: &CascadeModel,
    params: DetectParams,
) -> Result<Vec<Detection>, DetectError> {
    if !(params.scale_factor > 1.0) {
        return Err(DetectError::Parameters(format!(
            "scale factor must exceed 1, got {}",
            params.scale_factor
        )));
    }
    if params.min_neighbors == 0 {
        return Err(DetectError::Parameters("min_neighbors must be at least 1".into()));
    }
    let hits = raw_hits(img, model, params.scale_factor);
    Ok(group_hits(&hits, params.min_neighbors))
}

fn group_hits(hits: &[Rect], min_neighbors: usize) -> Vec<Detection> {
    let mut parent: Vec<usize> = (0..hits.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..hits.len() {
        for j in i + 1..hits.len() {
            if hits[i].iou(&hits[j]) >= 0.5 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Rect>> = Default::default();
    for i in 0..hits.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(hits[i]);
    }
    let mut out: Vec<Detection> = groups
        .into_values()
        .filter(|g| g.len() >= min_neighbors)
        .map(|g| {
            let n = g.len() as f64;
            let mean = |f: fn(&Rect) -> usize| (g.iter().map(|r| f(r) as f64).sum::<f64>() / n).round() as usize;
            Detection {
                rect: Rect {
                    x: mean(|r| r.x),
                    y: mean(|r| r.y),
                    w: mean(|r| r.w),
                    h: mean(|r| r.h),
                },
                neighbors: g.len(),
            }
        })
        .collect();
    out.sort_by_key(|d| (d.rect.y, d.rect.x, d.rect.w));
    out
}

/// Left/right eye search rectangles as fractions of the face size. The right
/// region mirrors the left one about the vertical midline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeGeometry {
    pub left_x: f64,
    pub top_y: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for EyeGeometry {
    fn default() -> Self {
        Self {
            left_x: 0.16,
            top_y: 0.26,
            width: 0.30,
            height: 0.28,
        }
    }
}

impl EyeGeometry {
    pub fn regions(&self, face_w: usize, face_h: usize) -> (Rect, Rect) {
        let w = ((self.width * face_w as f64).round() as usize).max(1);
        let h = ((self.height * face_h as f64).round() as usize).max(1);
        let lx = (self.left_x * face_w as f64).round() as usize;
        let y = (self.top_y * face_h as f64).round() as usize;
        let rx = face_w.saturating_sub(lx + w);
        (Rect { x: lx, y, w, h }, Rect { x: rx, y, w, h })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeRegions {
    pub lerr: Rect,
    pub rerr: Rect,
    /// Detected eye rectangles in face coordinates.
    pub left_eye: Rect,
    pub right_eye: Rect,
    pub left_center: (f64, f64),
    pub right_center: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeSearch {
    pub geometry: EyeGeometry,
    pub detect: DetectParams,
}

impl Default for EyeSearch {
    fn default() -> Self {
        Self {
            geometry: EyeGeometry::default(),
            detect: DetectParams {
                scale_factor: 1.1,
                min_neighbors: 1,
            },
        }
    }
}

/// Runs the eye cascade separately inside the left and right search regions
/// and returns both eye centers in face coordinates.
pub fn locate_eyes(
    face: &GrayImage,
    eye_model: &CascadeModel,
    search: &EyeSearch,
) -> Result<EyeRegions, DetectError> {
    let (lerr, rerr) = search.geometry.regions(face.width(), face.height());
    let find = |region: Rect, side: Side| -> Result<Rect, DetectError> {
        let sub = face.crop(region.x, region.y, region.w, region.h);
        let best = detect_objects(&sub, eye_model, search.detect)?
            .into_iter()
            .max_by_key(|d| (d.neighbors, d.rect.area()))
            .ok_or(DetectError::EyeNotFound(side))?;
        Ok(Rect {
            x: best.rect.x + region.x,
            y: best.rect.y + region.y,
            ..best.rect
        })
    };
    let left_eye = find(lerr, Side::Left)?;
    let right_eye = find(rerr, Side::Right)?;
    Ok(EyeRegions {
        lerr,
        rerr,
        left_eye,
        right_eye,
        left_center: left_eye.center(),
        right_center: right_eye.center(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidReason {
    NoFace,
    MissingEye,
    TooDark,
    Unreadable,
}

impl InvalidReason {
    pub fn code(&self) -> &'static str {
        match self {
            InvalidReason::NoFace => "no-face",
            InvalidReason::MissingEye => "missing-eye",
            InvalidReason::TooDark => "too-dark",
            InvalidReason::Unreadable => "unreadable",
        }
    }
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// A face sample counts only when a face was found and both eyes were located.
pub fn validate_face(face_found: bool, eyes: Option<&EyeRegions>) -> Validity {
    match (face_found, eyes) {
        (false, _) => Validity::Invalid(InvalidReason::NoFace),
        (true, None) => Validity::Invalid(InvalidReason::MissingEye),
        (true, Some(_)) => Validity::Valid,
    }
}

/// Small handcrafted cascades for synthetic imagery and tests.
pub mod handcrafted {
    use super::*;

    /// 16×16 window whose center 8×8 block is brighter than its surround.
    /// The feature is `4·center − window`, i.e. `192 · (mean_center − mean_surround)`,
    /// normalized by `area · std`.
    pub fn bright_square(threshold: f64) -> CascadeModel {
        CascadeModel {
            window_w: 16,
            window_h: 16,
            stages: vec![Stage {
                threshold: 1.0,
                weak: vec![WeakClassifier {
                    threshold,
                    leaf_lo: 0.0,
                    leaf_hi: 1.0,
                    rects: vec![
                        WeightedRect { x: 0, y: 0, w: 16, h: 16, weight: -1.0 },
                        WeightedRect { x: 4, y: 4, w: 8, h: 8, weight: 4.0 },
                    ],
                }],
            }],
        }
    }

    /// Dark blob detector for eye-like spots: a `size × size` window whose
    /// center half is darker than the surround, followed by a stage that
    /// requires the upper and lower halves of the center to be balanced.
    pub fn dark_blob(size: u32) -> CascadeModel {
        let q = size / 4;
        let h = size / 2;
        let half = |weight_top: f64| WeakClassifier {
            threshold: -0.1,
            leaf_lo: 0.0,
            leaf_hi: 1.0,
            rects: vec![
                WeightedRect { x: q, y: q, w: h, h: h / 2, weight: weight_top },
                WeightedRect { x: q, y: q + h / 2, w: h, h: h - h / 2, weight: -weight_top },
            ],
        };
        CascadeModel {
            window_w: size,
            window_h: size,
            stages: vec![
                Stage {
                    threshold: 1.0,
                    weak: vec![WeakClassifier {
                        threshold: 0.8,
                        leaf_lo: 0.0,
                        leaf_hi: 1.0,
                        rects: vec![
                            WeightedRect { x: 0, y: 0, w: size, h: size, weight: 1.0 },
                            WeightedRect { x: q, y: q, w: h, h, weight: -4.0 },
                        ],
                    }],
                },
                Stage {
                    threshold: 2.0,
                    weak: vec![half(1.0), half(-1.0)],
                },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MINIMAL: &str = "CASCADE v1\nwindow 4 4\nstages 1\nstage 0.5 1\nweak 0.1 0 1 1\nrect 0 0 2 2 1.0\n";

    fn plant_square(img: &mut GrayImage, x0: usize, y0: usize, value: u8) {
        for y in y0..y0 + 8 {
            for x in x0..x0 + 8 {
                img.set(x, y, value);
            }
        }
    }

    #[test]
    fn parses_minimal_cascade() {
        let m = parse_cascade(MINIMAL).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!((m.window_w, m.window_h), (4, 4));
        assert_eq!(m.stages[0].weak[0].rects[0].weight, 1.0);
    }

    #[test]
    fn rect_outside_window_names_line() {
        let text = "# comment\nCASCADE v1\nwindow 4 4\nstages 1\nstage 0.5 1\nweak 0.1 0 1 1\nrect 3 0 2 2 1.0\n";
        match parse_cascade(text) {
            Err(DetectError::Parse { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("outside"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_cascade("CASCADE v2\n"),
            Err(DetectError::Parse { line: 1, .. })
        ));
        // declared two stages, only one present
        let short = MINIMAL.replace("stages 1", "stages 2");
        assert!(matches!(parse_cascade(&short), Err(DetectError::Parse { .. })));
        let extra = format!("{MINIMAL}rect 0 0 1 1 1.0\n");
        assert!(matches!(parse_cascade(&extra), Err(DetectError::Parse { line: 7, .. })));
        let bad_num = MINIMAL.replace("0.1 0 1 1", "0.1 zero 1 1");
        assert!(matches!(parse_cascade(&bad_num), Err(DetectError::Parse { line: 5, .. })));
    }

    #[test]
    fn serialize_round_trip() {
        let models = [
            parse_cascade(MINIMAL).unwrap(),
            handcrafted::bright_square(1.5),
            handcrafted::dark_blob(12),
        ];
        for m in models {
            let text = serialize_cascade(&m);
            let back = parse_cascade(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(serialize_cascade(&back), text);
        }
    }

    #[test]
    fn handcrafted_cascades_are_valid() {
        handcrafted::bright_square(1.5).validate().unwrap();
        handcrafted::dark_blob(12).validate().unwrap();
    }

    #[test]
    fn single_planted_square_detected() {
        let mut img = GrayImage::filled(64, 64, 30);
        plant_square(&mut img, 28, 20, 200);
        let model = handcrafted::bright_square(1.5);
        let dets = detect_objects(&img, &model, DetectParams { scale_factor: 1.1, min_neighbors: 1 }).unwrap();
        assert_eq!(dets.len(), 1, "{dets:?}");
        let r = dets[0].rect;
        assert!((r.x as i64 - 24).abs() <= 2 && (r.y as i64 - 16).abs() <= 2, "{r:?}");
    }

    #[test]
    fn uniform_image_has_no_detections() {
        let img = GrayImage::filled(48, 48, 117);
        let dets = detect_objects(&img, &handcrafted::bright_square(1.5), DetectParams::default()).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn two_separated_squares_stay_separate() {
        let mut img = GrayImage::filled(96, 48, 30);
        plant_square(&mut img, 12, 20, 200);
        plant_square(&mut img, 62, 20, 200);
        let dets = detect_objects(&img, &handcrafted::bright_square(1.5), DetectParams { scale_factor: 1.1, min_neighbors: 1 }).unwrap();
        assert_eq!(dets.len(), 2, "{dets:?}");
        assert!((dets[0].rect.x as i64 - 8).abs() <= 2);
        assert!((dets[1].rect.x as i64 - 58).abs() <= 2);
    }

    #[test]
    fn window_larger_than_image_is_empty() {
        let img = GrayImage::filled(8, 8, 0);
        let dets = detect_objects(&img, &handcrafted::bright_square(1.5), DetectParams::default()).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn bad_parameters_rejected() {
        let img = GrayImage::filled(20, 20, 0);
        let m = handcrafted::bright_square(1.5);
        assert!(detect_objects(&img, &m, DetectParams { scale_factor: 1.0, min_neighbors: 1 }).is_err());
        assert!(detect_objects(&img, &m, DetectParams { scale_factor: 1.2, min_neighbors: 0 }).is_err());
    }

    fn eye_face(left: bool, right: bool) -> GrayImage {
        let (w, h) = (100usize, 100usize);
        let mut img = GrayImage::filled(w, h, 180);
        let mut plant = |cx: usize, cy: usize| {
            for y in cy - 4..cy + 4 {
                for x in cx - 4..cx + 4 {
                    img.set(x, y, 40);
                }
            }
        };
        if left {
            plant(30, 35);
        }
        if right {
            plant(70, 35);
        }
        img
    }

    #[test]
    fn eyes_located_near_plants() {
        let eyes = locate_eyes(&eye_face(true, true), &handcrafted::dark_blob(16), &EyeSearch::default()).unwrap();
        assert_eq!((eyes.lerr.w, eyes.lerr.h), (eyes.rerr.w, eyes.rerr.h));
        let near = |c: (f64, f64), p: (f64, f64)| (c.0 - p.0).abs() <= 2.0 && (c.1 - p.1).abs() <= 2.0;
        assert!(near(eyes.left_center, (30.0, 35.0)), "{:?}", eyes.left_center);
        assert!(near(eyes.right_center, (70.0, 35.0)), "{:?}", eyes.right_center);
        assert_eq!(eyes.left_center, eyes.left_eye.center());
    }

    #[test]
    fn missing_right_eye_is_named() {
        let err = locate_eyes(&eye_face(true, false), &handcrafted::dark_blob(16), &EyeSearch::default()).unwrap_err();
        assert_eq!(err, DetectError::EyeNotFound(Side::Right));
    }

    #[test]
    fn rect_center_is_midpoint() {
        let r = Rect { x: 10, y: 4, w: 6, h: 6 };
        assert_eq!(r.center(), (13.0, 7.0));
    }

    #[test]
    fn eye_regions_have_identical_size() {
        for (w, h) in [(70, 70), (101, 87), (33, 140)] {
            let (l, r) = EyeGeometry::default().regions(w, h);
            assert_eq!((l.w, l.h), (r.w, r.h));
            assert_eq!(l.y, r.y);
            assert!(r.x + r.w <= w);
        }
    }

    #[test]
    fn validity_rules() {
        let eyes = locate_eyes(&eye_face(true, true), &handcrafted::dark_blob(16), &EyeSearch::default()).unwrap();
        assert_eq!(validate_face(true, Some(&eyes)), Validity::Valid);
        assert_eq!(validate_face(true, None), Validity::Invalid(InvalidReason::MissingEye));
        assert_eq!(validate_face(false, None), Validity::Invalid(InvalidReason::NoFace));
    }

    proptest! {
        #[test]
        fn detection_is_translation_equivariant(dx in 0usize..10, dy in 0usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bg: u8 = rng.random_range(0..60);
            let mut a = GrayImage::filled(60, 60, bg);
            plant_square(&mut a, 20, 20, 220);
            let mut b = GrayImage::filled(60, 60, bg);
            plant_square(&mut b, 20 + dx, 20 + dy, 220);
            let model = handcrafted::bright_square(1.5);
            // only base-scale hits are guaranteed to land on the scan grid
            let ha = raw_hits(&a, &model, 100.0);
            let hb = raw_hits(&b, &model, 100.0);
            prop_assert_eq!(ha.len(), hb.len());
            for (ra, rb) in ha.iter().zip(&hb) {
                prop_assert_eq!((ra.x + dx, ra.y + dy), (rb.x, rb.y));
            }
            prop_assert!(!ha.is_empty());
        }

        #[test]
        fn detection_invariant_to_affine_intensity(gain in 0.3f64..1.0, offset in 0.0f64..60.0) {
            let mut img = GrayImage::filled(64, 64, 40);
            plant_square(&mut img, 10, 12, 160);
            plant_square(&mut img, 40, 36, 190);
            let adjusted = GrayImage::from_fn(64, 64, |x, y| {
                (img.get(x, y) as f64 * gain + offset).round().clamp(0.0, 255.0) as u8
            });
            let model = handcrafted::bright_square(1.5);
            let p = DetectParams { scale_factor: 1.1, min_neighbors: 1 };
            prop_assert_eq!(detect_objects(&img, &model, p).unwrap(), detect_objects(&adjusted, &model, p).unwrap());
        }
    }
}
