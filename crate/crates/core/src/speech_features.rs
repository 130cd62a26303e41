//! Voice front end: 16-bit mono WAV decoding, frame blocking, Hamming/Hanning
//! windows, FFT magnitude spectra, a mel-spaced triangular filterbank and the
//! cepstral (DCT-II) transform that yields MFCC vectors.

use std::io::Cursor;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeechError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed WAV data: {0}")]
    Malformed(String),
    #[error("feature configuration error: {0}")]
    Config(String),
    #[error("sample rate {actual} Hz does not match the configured {expected} Hz")]
    RateMismatch { expected: u32, actual: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcmSignal {
    sample_rate: u32,
    samples: Vec<i16>,
}

impl PcmSignal {
    pub fn new(sample_rate: u32, samples: Vec<i16>) -> Result<Self, SpeechError> {
        if sample_rate == 0 {
            return Err(SpeechError::UnsupportedFormat("sample rate must be positive".into()));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes a RIFF/WAVE file holding 16-bit mono integer PCM.
pub fn load_wav(bytes: &[u8]) -> Result<PcmSignal, SpeechError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| match e {
        hound::Error::Unsupported => SpeechError::UnsupportedFormat("not integer PCM".into()),
        hound::Error::FormatError(m) => SpeechError::Malformed(m.to_string()),
        other => SpeechError::Malformed(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(SpeechError::UnsupportedFormat("floating-point samples".into()));
    }
    if spec.channels != 1 {
        return Err(SpeechError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.bits_per_sample != 16 {
        return Err(SpeechError::UnsupportedFormat(format!(
            "{}-bit samples, expected 16-bit",
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SpeechError::Malformed(e.to_string()))?;
    PcmSignal::new(spec.sample_rate, samples)
}

/// Encodes a canonical 44-byte-header 16-bit mono WAV.
pub fn write_wav(signal: &PcmSignal) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut out, spec).expect("in-memory writer");
        for &s in &signal.samples {
            w.write_sample(s).expect("in-memory write");
        }
        w.finalize().expect("in-memory finalize");
    }
    out.into_inner()
}

pub fn hop_length(frame_len: usize, overlap: f64) -> usize {
    ((frame_len as f64 * (1.0 - overlap)).round() as usize).max(1)
}

pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        1 + (len - frame_len) / hop
    }
}

/// Splits the signal into overlapping frames of `frame_len` samples scaled to
/// `[-1, 1)`. A trailing partial frame is dropped.
pub fn frame_block(
    signal: &PcmSignal,
    frame_len: usize,
    overlap: f64,
) -> Result<Vec<Vec<f64>>, SpeechError> {
    if frame_len < 2 {
        return Err(SpeechError::Config(format!("frame length {frame_len} < 2")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(SpeechError::Config(format!("overlap {overlap} outside [0, 1)")));
    }
    let hop = hop_length(frame_len, overlap);
    let n = frame_count(signal.samples.len(), frame_len, hop);
    Ok((0..n)
        .map(|r| {
            signal.samples[r * hop..r * hop + frame_len]
                .iter()
                .map(|&s| s as f64 / 32768.0)
                .collect()
        })
        .collect())
}

pub const HAMMING: f64 = 0.54;
pub const HANNING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    phi: f64,
    coefficients: Vec<f64>,
}

impl WindowSpec {
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// `w(n) = φ − (1 − φ)·cos(2πn / (N − 1))`.
pub fn make_window(len: usize, phi: f64) -> Result<WindowSpec, SpeechError> {
    if len < 2 {
        return Err(SpeechError::Config(format!("window length {len} < 2")));
    }
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(SpeechError::Config(format!("window shape {phi} outside (0, 1]")));
    }
    let denom = (len - 1) as f64;
    let coefficients = (0..len)
        .map(|n| phi - (1.0 - phi) * (std::f64::consts::TAU * n as f64 / denom).cos())
        .collect();
    Ok(WindowSpec { phi, coefficients })
}

pub fn apply_window(frame: &[f64], window: &WindowSpec) -> Vec<f64> {
    frame
        .iter()
        .zip(&window.coefficients)
        .map(|(x, w)| x * w)
        .collect()
}

/// FFT magnitude for real frames of a fixed power-of-two length.
#[derive(Clone)]
pub struct Spectrum {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectrum").field("len", &self.len).finish()
    }
}

impl Spectrum {
    pub fn new(len: usize) -> Result<Self, SpeechError> {
        if len < 2 || !len.is_power_of_two() {
            return Err(SpeechError::Config(format!("FFT size {len} is not a power of two")));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(Self { len, fft })
    }

    /// `|DFT|` of the frame, bins `0..=N/2`.
    pub fn magnitudes(&self, frame: &[f64]) -> Result<Vec<f64>, SpeechError> {
        if frame.len() != self.len {
            return Err(SpeechError::Config(format!(
                "frame length {} does not match FFT size {}",
                frame.len(),
                self.len
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        Ok(buf[..=self.len / 2].iter().map(|c| c.norm()).collect())
    }
}

pub fn magnitude_spectrum(frame: &[f64]) -> Result<Vec<f64>, SpeechError> {
    Spectrum::new(frame.len())?.magnitudes(frame)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Floor applied to filter outputs before taking the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    fft_len: usize,
    sample_rate: u32,
    /// Break bins, `filters + 2` of them.
    breaks: Vec<usize>,
    /// `responses[i][j]` over bins `0..=N/2`.
    responses: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn responses(&self) -> &[Vec<f64>] {
        &self.responses
    }

    pub fn center_bins(&self) -> &[usize] {
        &self.breaks[1..self.breaks.len() - 1]
    }

    pub fn center_frequencies(&self) -> Vec<f64> {
        self.center_bins()
            .iter()
            .map(|&b| b as f64 * self.sample_rate as f64 / self.fft_len as f64)
            .collect()
    }
}

/// Triangular filters whose `filters + 2` break points are equally spaced on
/// the mel axis between 0 and the Nyquist frequency.
pub fn build_filterbank(filters: usize, fft_len: usize, sample_rate: u32) -> Result<MelFilterbank, SpeechError> {
    if filters < 2 {
        return Err(SpeechError::Config(format!("need at least 2 mel filters, got {filters}")));
    }
    if fft_len < 2 || sample_rate == 0 {
        return Err(SpeechError::Config("FFT size and rate must be positive".into()));
    }
    let bins = fft_len / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let breaks: Vec<usize> = (0..filters + 2)
        .map(|k| {
            let hz = mel_to_hz(top * k as f64 / (filters + 1) as f64);
            ((hz * fft_len as f64 / sample_rate as f64).round() as usize).min(bins - 1)
        })
        .collect();
    if breaks.windows(2).skip(1).take(filters).any(|w| w[1] <= w[0]) {
        return Err(SpeechError::Config(format!(
            "{filters} mel filters are too narrow for a {fft_len}-point spectrum"
        )));
    }
    let responses = (1..=filters)
        .map(|i| {
            let (lo, mid, hi) = (breaks[i - 1], breaks[i], breaks[i + 1]);
            (0..bins)
                .map(|j| {
                    if j < lo || j > hi {
                        0.0
                    } else if j <= mid {
                        if mid == lo {
                            1.0
                        } else {
                            (j - lo) as f64 / (mid - lo) as f64
                        }
                    } else {
                        (hi - j) as f64 / (hi - mid) as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(MelFilterbank {
        fft_len,
        sample_rate,
        breaks,
        responses,
    })
}

/// `log Y(i)` with `Y(i) = Σ_j S(j)·ψ_i(j)`.
pub fn apply_filterbank(spectrum: &[f64], bank: &MelFilterbank) -> Vec<f64> {
    bank.responses
        .iter()
        .map(|psi| {
            let y: f64 = spectrum.iter().zip(psi).map(|(s, p)| s * p).sum();
            y.max(ENERGY_FLOOR).ln()
        })
        .collect()
}

/// DCT-II of the log filter energies, coefficients `1..=count` (c0 dropped).
pub fn cepstral_transform(log_energies: &[f64], count: usize) -> Result<Vec<f64>, SpeechError> {
    let m = log_energies.len();
    if count > m {
        return Err(SpeechError::Config(format!(
            "{count} cepstral coefficients requested from {m} filters"
        )));
    }
    Ok((1..=count)
        .map(|n| {
            log_energies
                .iter()
                .enumerate()
                .map(|(i, &e)| e * (std::f64::consts::PI * n as f64 * (i as f64 + 0.5) / m as f64).cos())
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub overlap: f64,
    pub window_phi: f64,
    pub filters: usize,
    pub coefficients: usize,
    /// First-order pre-emphasis coefficient; off unless set.
    pub pre_emphasis: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len: 512,
            overlap: 0.5,
            window_phi: HAMMING,
            filters: 26,
            coefficients: 12,
            pre_emphasis: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    pub frames: Vec<Vec<f64>>,
    pub config: MfccConfig,
}

impl MfccSequence {
    pub fn dim(&self) -> usize {
        self.config.coefficients
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// One line per frame, comma-separated coefficients.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            let line: Vec<String> = f.iter().map(|v| format!("{v:.9}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse_dump(text: &str, config: MfccConfig) -> Result<Self, SpeechError> {
        let frames = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                let v: Vec<f64> = l
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| SpeechError::Malformed(format!("dump line {}: {e}", i + 1)))?;
                if v.len() != config.coefficients {
                    return Err(SpeechError::Malformed(format!(
                        "dump line {} has {} values, expected {}",
                        i + 1,
                        v.len(),
                        config.coefficients
                    )));
                }
                Ok(v)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { frames, config })
    }
}

/// Precomputed window, FFT plan and filterbank for one configuration.
#[derive(Debug, Clone)]
pub struct MfccExtractor {
    config: MfccConfig,
    window: WindowSpec,
    spectrum: Spectrum,
    bank: MelFilterbank,
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Result<Self, SpeechError> {
        if config.coefficients > config.filters {
            return Err(SpeechError::Config(format!(
                "{} cepstral coefficients requested from {} filters",
                config.coefficients, config.filters
            )));
        }
        Ok(Self {
            window: make_window(config.frame_len, config.window_phi)?,
            spectrum: Spectrum::new(config.frame_len)?,
            bank: build_filterbank(config.filters, config.frame_len, config.sample_rate)?,
            config,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn frame_mfcc(&self, frame: &[f64]) -> Result<Vec<f64>, SpeechError> {
        let windowed = apply_window(frame, &self.window);
        let mags = self.spectrum.magnitudes(&windowed)?;
        cepstral_transform(&apply_filterbank(&mags, &self.bank), self.config.coefficients)
    }

    pub fn extract(&self, signal: &PcmSignal) -> Result<MfccSequence, SpeechError> {
        if signal.sample_rate != self.config.sample_rate {
            return Err(SpeechError::RateMismatch {
                expected: self.config.sample_rate,
                actual: signal.sample_rate,
            });
        }
        let mut frames = frame_block(signal, self.config.frame_len, self.config.overlap)?;
        if let Some(alpha) = self.config.pre_emphasis {
            for f in &mut frames {
                for i in (1..f.len()).rev() {
                    f[i] -= alpha * f[i - 1];
                }
            }
        }
        let frames = frames
            .iter()
            .map(|f| self.frame_mfcc(f))
            .collect::<Result<_, _>>()?;
        Ok(MfccSequence {
            frames,
            config: self.config,
        })
    }
}

/// Full MFCC chain with the default configuration.
pub fn extract_mfcc(signal: &PcmSignal) -> Result<MfccSequence, SpeechError> {
    MfccExtractor::new(MfccConfig::default())?.extract(signal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &x) in frame.iter().enumerate() {
                    let a = -std::f64::consts::TAU * (k * t % n) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re.hypot(im)
            })
            .collect()
    }

    #[test]
    fn silence_wav() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 8).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        assert_eq!(bytes.len(), 52);
        let sig = load_wav(&bytes).unwrap();
        assert_eq!(sig.sample_rate(), 16000);
        assert_eq!(sig.samples(), &[0, 0, 0, 0]);
        assert_eq!(write_wav(&sig), bytes);
    }

    #[test]
    fn stereo_and_8bit_rejected() {
        let encode = |channels: u16, bits: u16| {
            let spec = hound::WavSpec {
                channels,
                sample_rate: 16000,
                bits_per_sample: bits,
                sample_format: hound::SampleFormat::Int,
            };
            let mut out = Cursor::new(Vec::new());
            let mut w = hound::WavWriter::new(&mut out, spec).unwrap();
            for _ in 0..(4 * channels) {
                if bits == 8 {
                    w.write_sample(0i8).unwrap();
                } else {
                    w.write_sample(0i16).unwrap();
                }
            }
            w.finalize().unwrap();
            out.into_inner()
        };
        assert!(matches!(load_wav(&encode(2, 16)), Err(SpeechError::UnsupportedFormat(_))));
        assert!(matches!(load_wav(&encode(1, 8)), Err(SpeechError::UnsupportedFormat(_))));
        assert!(load_wav(b"not a wav file at all").is_err());
    }

    #[test]
    fn full_scale_sine_round_trip() {
        let samples: Vec<i16> = (0..16000)
            .map(|i| {
                let t = i as f64 / 16000.0;
                (32767.0 * (std::f64::consts::TAU * 1000.0 * t).sin()).round() as i16
            })
            .collect();
        let sig = PcmSignal::new(16000, samples).unwrap();
        let back = load_wav(&write_wav(&sig)).unwrap();
        assert_eq!(back.samples().len(), 16000);
        let peak = back.samples().iter().map(|s| s.unsigned_abs()).max().unwrap();
        assert!((32766..=32768).contains(&peak), "peak {peak}");
        assert_eq!(back, sig);
    }

    #[test]
    fn frame_counts() {
        let sig = |n| PcmSignal::new(16000, vec![0; n]).unwrap();
        assert_eq!(frame_block(&sig(512), 512, 0.5).unwrap().len(), 1);
        assert_eq!(frame_block(&sig(48000), 512, 0.5).unwrap().len(), 186);
        assert_eq!(frame_block(&sig(511), 512, 0.5).unwrap().len(), 0);
        assert!(frame_block(&sig(10), 1, 0.5).is_err());
        assert!(frame_block(&sig(10), 4, 1.0).is_err());
    }

    #[test]
    fn frames_start_at_hop_multiples() {
        let sig = PcmSignal::new(8000, (0..2000).map(|i| i as i16).collect()).unwrap();
        let frames = frame_block(&sig, 512, 0.5).unwrap();
        for (r, f) in frames.iter().enumerate() {
            assert_eq!(f[0], (r * 256) as f64 / 32768.0);
        }
    }

    #[test]
    fn window_values() {
        let w = make_window(511, HAMMING).unwrap();
        assert!((w.coefficients()[0] - 0.08).abs() < 1e-15);
        assert_eq!(w.coefficients()[255], 1.0);
        let h = make_window(512, HANNING).unwrap();
        assert_eq!(h.coefficients()[0], 0.0);
        assert!(h.coefficients()[511].abs() < 1e-15);
        let even = make_window(512, HAMMING).unwrap();
        let max = even.coefficients().iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-4, "even-length peak {max}");
        assert!(make_window(1, HAMMING).is_err());
        assert!(make_window(8, 0.0).is_err());
    }

    #[test]
    fn zero_frame_has_zero_spectrum() {
        assert!(magnitude_spectrum(&[0.0; 512]).unwrap().iter().all(|&m| m == 0.0));
        assert!(magnitude_spectrum(&[0.0; 500]).is_err());
    }

    #[test]
    fn bin_aligned_cosine() {
        let frame: Vec<f64> = (0..512)
            .map(|n| (std::f64::consts::TAU * 8.0 * n as f64 / 512.0).cos())
            .collect();
        let s = magnitude_spectrum(&frame).unwrap();
        assert!((s[8] - 256.0).abs() < 1e-9);
        for (k, &m) in s.iter().enumerate() {
            if k != 8 {
                assert!(m <= 1e-9, "bin {k}: {m}");
            }
        }
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(512);
        let frame: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = magnitude_spectrum(&frame).unwrap();
        let slow = naive_dft(&frame);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mel_scale_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(1000.0) - 999.99).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn filterbank_shape() {
        let bank = build_filterbank(26, 512, 16000).unwrap();
        assert_eq!(bank.len(), 26);
        let centers = bank.center_frequencies();
        assert!(centers.windows(2).all(|w| w[1] > w[0]));
        for psi in bank.responses() {
            assert!(psi.iter().all(|&v| v >= 0.0));
            let support: Vec<usize> = (0..psi.len()).filter(|&j| psi[j] > 0.0).collect();
            assert!(!support.is_empty());
            assert_eq!(support.len(), support[support.len() - 1] - support[0] + 1, "contiguous");
            // unimodal: rises then falls
            let peak = support.iter().copied().max_by(|&a, &b| psi[a].total_cmp(&psi[b])).unwrap();
            assert!(support.windows(2).all(|w| if w[1] <= peak { psi[w[1]] >= psi[w[0]] } else { psi[w[1]] <= psi[w[0]] }));
        }
        assert!(build_filterbank(1, 512, 16000).is_err());
        assert!(build_filterbank(200, 64, 16000).is_err());
    }

    #[test]
    fn flat_spectrum_sums_filter_responses() {
        let bank = build_filterbank(26, 512, 16000).unwrap();
        let flat = vec![1.0; 257];
        let logs = apply_filterbank(&flat, &bank);
        for (i, psi) in bank.responses().iter().enumerate() {
            let mut brute = 0.0;
            for v in psi {
                brute += v;
            }
            assert!((logs[i] - brute.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dct_of_constant_is_zero() {
        let c = cepstral_transform(&[3.7; 26], 12).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12), "{c:?}");
        assert!(cepstral_transform(&[0.0; 10], 11).is_err());
    }

    #[test]
    fn dct_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let e: Vec<f64> = (0..26).map(|_| rng.random_range(-20.0..5.0)).collect();
        let c = cepstral_transform(&e, 12).unwrap();
        for n in 1..=12 {
            let mut s = 0.0;
            for i in 1..=26 {
                s += e[i - 1] * (n as f64 * (i as f64 - 0.5) * std::f64::consts::PI / 26.0).cos();
            }
            assert!((c[n - 1] - s).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_gives_identical_vectors() {
        let seq = extract_mfcc(&PcmSignal::new(16000, vec![0; 48000]).unwrap()).unwrap();
        assert_eq!(seq.len(), 186);
        assert!(seq.frames.iter().all(|f| f == &seq.frames[0] && f.len() == 12));
        assert!(seq.frames[0].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rate_mismatch_rejected() {
        let sig = PcmSignal::new(8000, vec![0; 4000]).unwrap();
        assert_eq!(
            extract_mfcc(&sig),
            Err(SpeechError::RateMismatch { expected: 16000, actual: 8000 })
        );
    }

    #[test]
    fn too_many_coefficients_rejected() {
        let cfg = MfccConfig { coefficients: 27, ..MfccConfig::default() };
        assert!(matches!(MfccExtractor::new(cfg), Err(SpeechError::Config(_))));
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = (0..4000).map(|_| rng.random_range(-3000..3000)).collect();
        let seq = extract_mfcc(&PcmSignal::new(16000, samples).unwrap()).unwrap();
        let back = MfccSequence::parse_dump(&seq.to_dump(), seq.config).unwrap();
        assert_eq!(back.len(), seq.len());
        for (a, b) in back.frames.iter().zip(&seq.frames) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn window_is_symmetric(n in 2usize..600, hanning in any::<bool>()) {
            let w = make_window(n, if hanning { HANNING } else { HAMMING }).unwrap();
            let c = w.coefficients();
            for i in 0..n {
                prop_assert!((c[i] - c[n - 1 - i]).abs() < 1e-12);
            }
        }

        #[test]
        fn parseval_on_half_spectrum(seed in any::<u64>(), log_n in 3u32..10) {
            let n = 1usize << log_n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frame: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = magnitude_spectrum(&frame).unwrap();
            let mut spectral = s[0] * s[0] + s[n / 2] * s[n / 2];
            for m in &s[1..n / 2] {
                spectral += 2.0 * m * m;
            }
            let energy: f64 = frame.iter().map(|x| x * x).sum();
            prop_assert!((spectral - n as f64 * energy).abs() <= 1e-6 * n as f64 * energy);
        }

        #[test]
        fn extraction_is_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<i16> = (0..3000).map(|_| rng.random()).collect();
            let sig = PcmSignal::new(16000, samples).unwrap();
            prop_assert_eq!(extract_mfcc(&sig).unwrap(), extract_mfcc(&sig).unwrap());
        }
    }
}
