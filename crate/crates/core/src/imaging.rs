//! 8-bit grayscale rasters and the pixel-level operations the face pipeline
//! is built from: PGM I/O, summed-area tables, histogram equalization,
//! bilateral smoothing and inverse-mapped affine warps.
//!
//! Point coordinates are continuous: pixel `(i, j)` covers `[i, i+1) × [j, j+1)`
//! and its center sits at `(i + 0.5, j + 0.5)`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("PGM format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("invalid image dimensions {width}x{height} for {len} pixels")]
    Dimensions { width: usize, height: usize, len: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

fn format_err(offset: usize, message: impl Into<String>) -> ImageError {
    ImageError::Format {
        offset,
        message: message.into(),
    }
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Copy of the `w × h` region at `(x, y)`, clipped to the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> GrayImage {
        let x1 = (x + w).min(self.width);
        let y1 = (y + h).min(self.height);
        let x0 = x.min(x1.saturating_sub(1));
        let y0 = y.min(y1.saturating_sub(1));
        GrayImage::from_fn((x1 - x0).max(1), (y1 - y0).max(1), |cx, cy| {
            self.get(x0 + cx, y0 + cy)
        })
    }

    pub fn min_max(&self) -> (u8, u8) {
        let min = self.pixels.iter().copied().min().unwrap_or(0);
        let max = self.pixels.iter().copied().max().unwrap_or(0);
        (min, max)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn mirrored(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }
}

/// Parses a binary PGM (`P5`, maxval 255).
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(0, "expected magic \"P5\""));
    }
    pos += 2;

    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        skip_whitespace_and_comments(bytes, &mut pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(format_err(start, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| format_err(start, format!("number out of range: {text}")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err(pos, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(format_err(pos, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(pos, "missing whitespace after header")),
    }
    let need = width
        .checked_mul(height)
        .ok_or_else(|| format_err(pos, "image too large"))?;
    let available = bytes.len() - pos;
    if available < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {available}"),
        ));
    }
    GrayImage::new(width, height, bytes[pos..pos + need].to_vec())
}

fn skip_whitespace_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        if bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        } else if bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
}

pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Summed-area table with a zero first row and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        Self::build(img, |p| p as u64)
    }

    /// Table over squared intensities, used for window variance.
    pub fn squared(img: &GrayImage) -> Self {
        Self::build(img, |p| (p as u64) * (p as u64))
    }

    fn build(img: &GrayImage, f: impl Fn(u8) -> u64) -> Self {
        let stride = img.width + 1;
        let mut sums = vec![0u64; stride * (img.height + 1)];
        for y in 0..img.height {
            let mut row = 0u64;
            for x in 0..img.width {
                row += f(img.get(x, y));
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            width: img.width,
            height: img.height,
            sums,
        }
    }

    /// Image width; the table itself is one larger in each direction.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Entry at table coordinates `(x, y)`, `0 ≤ x ≤ width`, `0 ≤ y ≤ height`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u64 {
        self.sums[y * (self.width + 1) + x]
    }

    #[inline]
    pub fn rect_sum(&self, x: usize, y: usize, w: usize, h: usize) -> u64 {
        self.at(x + w, y + h) + self.at(x, y) - self.at(x + w, y) - self.at(x, y + h)
    }

    pub fn total(&self) -> u64 {
        self.at(self.width, self.height)
    }
}

pub fn integral_image(img: &GrayImage) -> IntegralImage {
    IntegralImage::new(img)
}

/// Global histogram equalization by CDF remapping. A single-valued image maps
/// to all zeros.
pub fn equalize_histogram(img: &GrayImage) -> GrayImage {
    let lut = equalization_lut(img.pixels.iter().copied());
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| lut[p as usize]).collect(),
    }
}

pub(crate) fn equalization_lut(pixels: impl Iterator<Item = u8>) -> [u8; 256] {
    let mut hist = [0u64; 256];
    for p in pixels {
        hist[p as usize] += 1;
    }
    let n: u64 = hist.iter().sum();
    let mut cdf = [0u64; 256];
    let mut acc = 0u64;
    for (c, h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let mut lut = [0u8; 256];
    if n == cdf_min {
        return lut;
    }
    let denom = (n - cdf_min) as f64;
    for (v, out) in lut.iter_mut().enumerate() {
        let num = cdf[v].saturating_sub(cdf_min) as f64;
        *out = (255.0 * num / denom).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralParams {
    pub sigma_d: f64,
    pub sigma_r: f64,
}

impl BilateralParams {
    pub fn new(sigma_d: f64, sigma_r: f64) -> Result<Self, ImageError> {
        if !(sigma_d > 0.0 && sigma_r > 0.0) {
            return Err(ImageError::Parameter(
                "bilateral sigmas must be positive".into(),
            ));
        }
        Ok(Self { sigma_d, sigma_r })
    }

    pub fn radius(&self) -> usize {
        (2.0 * self.sigma_d).ceil() as usize
    }
}

impl Default for BilateralParams {
    /// σd = 2 px, σr = 20 gray levels.
    fn default() -> Self {
        Self {
            sigma_d: 2.0,
            sigma_r: 20.0,
        }
    }
}

/// Edge-preserving smoothing over a square window of radius ⌈2σd⌉. Neighbors
/// that fall outside the image are skipped.
pub fn bilateral_filter(img: &GrayImage, params: BilateralParams) -> GrayImage {
    let r = params.radius() as isize;
    let side = (2 * r + 1) as usize;
    let mut spatial = vec![0.0f64; side * side];
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            spatial[((dy + r) as usize) * side + (dx + r) as usize] =
                (-d2 / (2.0 * params.sigma_d * params.sigma_d)).exp();
        }
    }
    let mut range = [0.0f64; 256];
    for (d, w) in range.iter_mut().enumerate() {
        let d = d as f64;
        *w = (-d * d / (2.0 * params.sigma_r * params.sigma_r)).exp();
    }

    let (w, h) = (img.width as isize, img.height as isize);
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        for x in 0..w {
            let center = img.get(x as usize, y as usize);
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= h {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= w {
                        continue;
                    }
                    let p = img.get(xx as usize, yy as usize);
                    let weight = spatial[((dy + r) as usize) * side + (dx + r) as usize]
                        * range[center.abs_diff(p) as usize];
                    num += weight * p as f64;
                    den += weight;
                }
            }
            out.push((num / den).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}

/// Similarity transform `p' = scale · R(angle) · (p − center) + center + translation`
/// in continuous image coordinates. Positive angles turn +x towards +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub angle_deg: f64,
    pub scale: f64,
    pub center: (f64, f64),
    pub translation: (f64, f64),
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            scale: 1.0,
            center: (0.0, 0.0),
            translation: (0.0, 0.0),
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        (
            self.scale * (c * dx - s * dy) + self.center.0 + self.translation.0,
            self.scale * (s * dx + c * dy) + self.center.1 + self.translation.1,
        )
    }

    pub fn apply_inverse(&self, q: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let u = (q.0 - self.center.0 - self.translation.0) / self.scale;
        let v = (q.1 - self.center.1 - self.translation.1) / self.scale;
        (c * u + s * v + self.center.0, -s * u + c * v + self.center.1)
    }
}

/// Resamples `img` through `transform` into an `out_w × out_h` raster. Each
/// output pixel center is inverse-mapped and read with bilinear interpolation;
/// samples outside the source read as 0.
///
/// # Panics
/// If `transform.scale` is not positive or an output dimension is zero.
pub fn affine_warp(
    img: &GrayImage,
    transform: &AffineTransform,
    out_w: usize,
    out_h: usize,
) -> GrayImage {
    assert!(transform.scale > 0.0, "warp scale must be positive");
    GrayImage::from_fn(out_w, out_h, |x, y| {
        let (u, v) = transform.apply_inverse((x as f64 + 0.5, y as f64 + 0.5));
        sample_bilinear(img, u - 0.5, v - 0.5)
            .round()
            .clamp(0.0, 255.0) as u8
    })
}

/// Bilinear read at pixel-index coordinates; out-of-image taps read 0.
pub fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let tap = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= img.width as f64 || yi >= img.height as f64 {
            0.0
        } else {
            img.get(xi as usize, yi as usize) as f64
        }
    };
    let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1.0, y0) * fx;
    let bottom = tap(x0, y0 + 1.0) * (1.0 - fx) + tap(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}
