//! Procedural stand-ins for face photographs and voice recordings.
//!
//! A face identity is a fixed arrangement of Gaussian blobs (eyes, brows,
//! nose, mouth and a few identity-specific marks) on an elliptical head; each
//! sample re-renders it under a random pose, illumination gradient and sensor
//! noise. A voice identity is a pitch plus three formant resonances shaping
//! its harmonics under a syllabic envelope; each sample jitters pitch and
//! formants slightly and adds noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::face_pipeline::EyePair;
use crate::imaging::{AffineTransform, GrayImage};
use crate::speech_features::PcmSignal;

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    sx: f64,
    sy: f64,
    amplitude: f64,
}

impl Blob {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.x) / self.sx;
        let dy = (y - self.y) / self.sy;
        let r2 = dx * dx + dy * dy;
        if r2 > 16.0 {
            0.0
        } else {
            self.amplitude * (-0.5 * r2).exp()
        }
    }
}

/// Per-identity face layout in unit coordinates (`[0,1]²` of the frame).
#[derive(Debug, Clone)]
pub struct FaceIdentity {
    head_center: (f64, f64),
    head_axes: (f64, f64),
    skin: f64,
    background: f64,
    left_eye: (f64, f64),
    right_eye: (f64, f64),
    features: Vec<Blob>,
}

impl FaceIdentity {
    pub fn random(rng: &mut impl Rng) -> Self {
        let eye_y = rng.random_range(0.37..0.43);
        let eye_dx = rng.random_range(0.17..0.22);
        let eye_tilt = rng.random_range(-0.01..0.01);
        let left_eye = (0.5 - eye_dx, eye_y - eye_tilt);
        let right_eye = (0.5 + eye_dx, eye_y + eye_tilt);
        let eye_size = rng.random_range(0.022..0.034);
        let eye_dark = rng.random_range(-120.0..-80.0);

        let mut features = vec![
            Blob { x: left_eye.0, y: left_eye.1, sx: eye_size * 1.3, sy: eye_size, amplitude: eye_dark },
            Blob { x: right_eye.0, y: right_eye.1, sx: eye_size * 1.3, sy: eye_size, amplitude: eye_dark },
        ];
        let brow_y = eye_y - rng.random_range(0.06..0.10);
        let brow_amp = rng.random_range(-70.0..-20.0);
        let brow_w = rng.random_range(0.04..0.07);
        for ex in [left_eye.0, right_eye.0] {
            features.push(Blob { x: ex, y: brow_y, sx: brow_w, sy: 0.012, amplitude: brow_amp });
        }
        features.push(Blob {
            x: 0.5 + rng.random_range(-0.01..0.01),
            y: rng.random_range(0.54..0.60),
            sx: rng.random_range(0.02..0.04),
            sy: rng.random_range(0.04..0.07),
            amplitude: rng.random_range(-50.0..-15.0),
        });
        features.push(Blob {
            x: 0.5 + rng.random_range(-0.01..0.01),
            y: rng.random_range(0.68..0.75),
            sx: rng.random_range(0.06..0.11),
            sy: rng.random_range(0.015..0.03),
            amplitude: rng.random_range(-90.0..-40.0),
        });
        // identity marks: cheeks, moles, shading
        for _ in 0..8 {
            let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            features.push(Blob {
                x: rng.random_range(0.25..0.75),
                y: rng.random_range(0.30..0.85),
                sx: rng.random_range(0.03..0.09),
                sy: rng.random_range(0.03..0.09),
                amplitude: sign * rng.random_range(50.0..100.0),
            });
        }
        Self {
            head_center: (0.5, rng.random_range(0.50..0.55)),
            head_axes: (rng.random_range(0.30..0.36), rng.random_range(0.40..0.46)),
            skin: rng.random_range(150.0..190.0),
            background: rng.random_range(40.0..80.0),
            left_eye,
            right_eye,
            features,
        }
    }

    fn intensity(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.head_center.0) / self.head_axes.0;
        let dy = (y - self.head_center.1) / self.head_axes.1;
        let r = (dx * dx + dy * dy).sqrt();
        // soft head edge
        let head = 1.0 / (1.0 + ((r - 1.0) * 25.0).exp());
        let base = self.background + (self.skin - self.background) * head;
        base + head * self.features.iter().map(|b| b.eval(x, y)).sum::<f64>()
    }
}

/// Renders one sample of `identity` as a `size × size` image and returns the
/// exact eye centers in image coordinates.
pub fn render_face(identity: &FaceIdentity, rng: &mut impl Rng, size: usize) -> (GrayImage, EyePair) {
    let s = size as f64;
    let pose = AffineTransform {
        angle_deg: rng.random_range(-5.0..5.0),
        scale: rng.random_range(0.94..1.06),
        center: (s / 2.0, s / 2.0),
        translation: (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
    };
    let gradient: f64 = rng.random_range(-0.35..0.35);
    let brightness: f64 = rng.random_range(0.85..1.1);
    let noise = Normal::new(0.0, 4.0).expect("valid sigma");

    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = pose.apply_inverse((x as f64 + 0.5, y as f64 + 0.5));
            let base = identity.intensity(u / s, v / s);
            let light = brightness * (1.0 + gradient * ((x as f64 + 0.5) / s - 0.5) * 2.0);
            let value = base * light + noise.sample(rng);
            pixels.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }
    let to_image = |p: (f64, f64)| pose.apply((p.0 * s, p.1 * s));
    let eyes = EyePair::new(to_image(identity.left_eye), to_image(identity.right_eye));
    (
        GrayImage::new(size, size, pixels).expect("dimensions match"),
        eyes,
    )
}

/// Per-identity vocal source pitch and formant resonances.
#[derive(Debug, Clone)]
pub struct VoiceIdentity {
    pitch: f64,
    formants: [f64; 3],
    bandwidths: [f64; 3],
    amplitudes: [f64; 3],
    syllable_rate: f64,
}

impl VoiceIdentity {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            pitch: rng.random_range(90.0..220.0),
            formants: [
                rng.random_range(300.0..900.0),
                rng.random_range(900.0..2500.0),
                rng.random_range(2500.0..3800.0),
            ],
            bandwidths: [
                rng.random_range(60.0..150.0),
                rng.random_range(80.0..200.0),
                rng.random_range(100.0..250.0),
            ],
            amplitudes: [1.0, rng.random_range(0.3..0.9), rng.random_range(0.1..0.5)],
            syllable_rate: rng.random_range(2.0..5.0),
        }
    }

    fn harmonic_gain(&self, f: f64, detune: &[f64; 3]) -> f64 {
        let mut g = 0.01;
        for k in 0..3 {
            let x = (f - self.formants[k] * detune[k]) / self.bandwidths[k];
            g += self.amplitudes[k] / (1.0 + x * x);
        }
        g
    }
}

/// Renders `seconds` of one voiced utterance at `rate` Hz: harmonics of the
/// identity's pitch weighted by its formant resonances, under a syllabic
/// amplitude envelope, with per-sample pitch and formant jitter.
pub fn render_voice(identity: &VoiceIdentity, rng: &mut impl Rng, rate: u32, seconds: f64) -> PcmSignal {
    let n = (rate as f64 * seconds).round() as usize;
    let detune = [
        1.0 + rng.random_range(-0.01..0.01),
        1.0 + rng.random_range(-0.01..0.01),
        1.0 + rng.random_range(-0.01..0.01),
    ];
    let f0 = identity.pitch * (1.0 + rng.random_range(-0.03..0.03));
    let envelope_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let gain: f64 = rng.random_range(0.5..0.9);
    let noise = Normal::new(0.0, 0.002).expect("valid sigma");

    let nyquist = rate as f64 / 2.0;
    let harmonics: Vec<(f64, f64)> = (1..)
        .map(|h| h as f64 * f0)
        .take_while(|&f| f < nyquist * 0.95)
        .map(|f| (f, identity.harmonic_gain(f, &detune)))
        .collect();
    let norm: f64 = harmonics.iter().map(|h| h.1).sum();
    // phasor recurrences: z_h(t+1) = z_h(t)·e^{iω_h}
    let mut phasors: Vec<(f64, f64, f64, f64, f64)> = harmonics
        .iter()
        .map(|&(f, a)| {
            let w = std::f64::consts::TAU * f / rate as f64;
            let p0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (p0.cos(), p0.sin(), w.cos(), w.sin(), a / norm)
        })
        .collect();

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate as f64;
        let env = 0.6 + 0.4 * (std::f64::consts::TAU * identity.syllable_rate * t + envelope_phase).sin();
        let mut tone = 0.0;
        for z in phasors.iter_mut() {
            tone += z.4 * z.1;
            let re = z.0 * z.2 - z.1 * z.3;
            let im = z.0 * z.3 + z.1 * z.2;
            z.0 = re;
            z.1 = im;
        }
        let v = gain * env * tone * 4.0 + noise.sample(rng);
        samples.push((v * 32767.0).round().clamp(-32768.0, 32767.0) as i16);
    }
    PcmSignal::new(rate, samples).expect("positive rate")
}
