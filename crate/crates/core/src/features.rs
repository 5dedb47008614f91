//! MFCC front-end: 25 ms frames every 10 ms, 23 mel filters over 20-7600 Hz,
//! orthonormal DCT-II with c0 replaced by log frame energy, followed by an
//! energy VAD and per-utterance cepstral mean normalization.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio::Waveform;

#[derive(Error, Debug)]
pub enum FeatureError {
    #[error("waveform has {samples} samples, shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("sample rate {got} Hz does not match the configured {expected} Hz")]
    SampleRate { got: u32, expected: u32 },
    #[error("feature matrix must have at least one frame and finite values")]
    InvalidMatrix,
    #[error("mask length {mask} does not match {frames} frames")]
    MaskLength { mask: usize, frames: usize },
    #[error("no frames kept by the mask")]
    NoKeptFrames,
    #[error("feature cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Per-utterance features keyed by utterance id.
pub type FeatureStore = std::collections::HashMap<String, FeatureMatrix>;

pub const DEFAULT_FRAME_SHIFT_S: f64 = 0.010;
pub const DEFAULT_FRAME_LENGTH_S: f64 = 0.025;

/// A T x D matrix of per-frame features, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    frame_shift_s: f64,
    frame_length_s: f64,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, frame_shift_s: f64, frame_length_s: f64) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 || values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidMatrix);
        }
        Ok(Self {
            values,
            frame_shift_s,
            frame_length_s,
        })
    }

    /// Matrix with the default 10 ms / 25 ms framing.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        Self::new(values, DEFAULT_FRAME_SHIFT_S, DEFAULT_FRAME_LENGTH_S)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn frame_length_s(&self) -> f64 {
        self.frame_length_s
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 * self.frame_shift_s
    }

    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        Self {
            values,
            frame_shift_s: self.frame_shift_s,
            frame_length_s: self.frame_length_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub sample_rate_hz: u32,
    pub frame_length_s: f64,
    pub frame_shift_s: f64,
    pub fft_size: usize,
    pub num_mel_bins: usize,
    pub num_ceps: usize,
    pub low_freq_hz: f64,
    pub high_freq_hz: f64,
    pub preemphasis: f64,
    /// Energies below this are clamped before taking the log.
    pub energy_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            frame_length_s: DEFAULT_FRAME_LENGTH_S,
            frame_shift_s: DEFAULT_FRAME_SHIFT_S,
            fft_size: 512,
            num_mel_bins: 23,
            num_ceps: 23,
            low_freq_hz: 20.0,
            high_freq_hz: 7600.0,
            preemphasis: 0.97,
            energy_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn frame_samples(&self) -> usize {
        (self.frame_length_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.frame_shift_s * self.sample_rate_hz as f64).round() as usize
    }

    /// `1 + floor((n - frame) / shift)`, or `None` when `n` is shorter than a frame.
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        let frame = self.frame_samples();
        (num_samples >= frame).then(|| 1 + (num_samples - frame) / self.shift_samples())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular filters evenly spaced on the mel scale, shape `(num_mel_bins, fft_size / 2 + 1)`.
pub fn mel_filterbank(config: &MfccConfig) -> Array2<f64> {
    let num_bins = config.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(config.low_freq_hz);
    let mel_hi = hz_to_mel(config.high_freq_hz);
    let delta = (mel_hi - mel_lo) / (config.num_mel_bins + 1) as f64;
    let bin_hz = config.sample_rate_hz as f64 / config.fft_size as f64;
    let mut bank = Array2::zeros((config.num_mel_bins, num_bins));
    for m in 0..config.num_mel_bins {
        let left = mel_lo + m as f64 * delta;
        let center = left + delta;
        let right = center + delta;
        for k in 0..num_bins {
            let mel = hz_to_mel(k as f64 * bin_hz);
            if mel > left && mel < right {
                bank[(m, k)] = if mel <= center {
                    (mel - left) / (center - left)
                } else {
                    (right - mel) / (right - center)
                };
            }
        }
    }
    bank
}

/// Orthonormal DCT-II basis, shape `(num_ceps, num_mel_bins)`.
pub fn dct_matrix(num_ceps: usize, num_mel_bins: usize) -> Array2<f64> {
    let m = num_mel_bins as f64;
    Array2::from_shape_fn((num_ceps, num_mel_bins), |(k, j)| {
        let scale = if k == 0 {
            (1.0 / m).sqrt()
        } else {
            (2.0 / m).sqrt()
        };
        scale * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m).cos()
    })
}

/// Reusable MFCC extractor; holds the FFT plan, window, filterbank and DCT basis.
pub struct MfccExtractor {
    config: MfccConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    dct: Array2<f64>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        let n = config.frame_samples();
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0)).cos())
            .collect();
        let filterbank = mel_filterbank(&config);
        let dct = dct_matrix(config.num_ceps, config.num_mel_bins);
        Self {
            config,
            fft,
            window,
            filterbank,
            dct,
        }
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn compute(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let cfg = &self.config;
        if wave.sample_rate_hz() != cfg.sample_rate_hz {
            return Err(FeatureError::SampleRate {
                got: wave.sample_rate_hz(),
                expected: cfg.sample_rate_hz,
            });
        }
        let frame_len = cfg.frame_samples();
        let shift = cfg.shift_samples();
        let num_frames = cfg.num_frames(wave.len()).ok_or(FeatureError::TooShort {
            samples: wave.len(),
            frame: frame_len,
        })?;
        let num_bins = cfg.fft_size / 2 + 1;
        let samples = wave.samples();
        let mut out = Array2::zeros((num_frames, cfg.num_ceps));
        let mut frame = vec![0.0; frame_len];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut mag = Array1::zeros(num_bins);

        for t in 0..num_frames {
            frame.copy_from_slice(&samples[t * shift..t * shift + frame_len]);
            let mean = frame.iter().sum::<f64>() / frame_len as f64;
            frame.iter_mut().for_each(|x| *x -= mean);
            let log_energy = frame
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .max(cfg.energy_floor)
                .ln();

            for i in (1..frame_len).rev() {
                frame[i] -= cfg.preemphasis * frame[i - 1];
            }
            frame[0] -= cfg.preemphasis * frame[0];

            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (b, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                b.re = x * w;
            }
            self.fft.process(&mut buf);
            for (m, c) in mag.iter_mut().zip(&buf[..num_bins]) {
                *m = c.norm();
            }

            let log_mel = self
                .filterbank
                .dot(&mag)
                .mapv(|e: f64| e.max(cfg.energy_floor).ln());
            let mut ceps = self.dct.dot(&log_mel);
            ceps[0] = log_energy;
            out.row_mut(t).assign(&ceps);
        }
        FeatureMatrix::new(out, cfg.frame_shift_s, cfg.frame_length_s)
    }
}

pub fn compute_mfcc(wave: &Waveform, config: &MfccConfig) -> Result<FeatureMatrix> {
    MfccExtractor::new(config.clone()).compute(wave)
}

/// Per-frame keep/drop decision, same length as the matrix it was computed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VadMask {
    keep: Vec<bool>,
}

impl VadMask {
    pub fn new(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn all(frames: usize) -> Self {
        Self {
            keep: vec![true; frames],
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadConfig {
    /// Additive threshold on natural-log frame energy for [-1, 1] amplitudes.
    pub threshold: f64,
    pub mean_scale: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        // 5.5 on the 16-bit integer scale, moved to unit amplitude. The mean term
        // absorbs half of the 2*ln(32768) offset, so only ln(32768) remains.
        Self {
            threshold: 5.5 - 32768f64.ln(),
            mean_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadOutcome {
    pub mask: VadMask,
    /// True when the rule dropped every frame and all frames were kept instead.
    pub fallback: bool,
}

/// Keeps frame t iff `logE_t > threshold + mean_scale * mean(logE)`, reading log energy from
/// coefficient 0.
pub fn energy_vad(feats: &FeatureMatrix, config: &VadConfig) -> VadOutcome {
    let log_e = feats.values.column(0);
    let mean = log_e.mean().unwrap_or(0.0);
    let cut = config.threshold + config.mean_scale * mean;
    let keep: Vec<bool> = log_e.iter().map(|&e| e > cut).collect();
    if keep.iter().any(|k| *k) {
        VadOutcome {
            mask: VadMask::new(keep),
            fallback: false,
        }
    } else {
        log::warn!("energy VAD dropped all {} frames, keeping all", keep.len());
        VadOutcome {
            mask: VadMask::all(keep.len()),
            fallback: true,
        }
    }
}

/// Keeps the masked frames and subtracts each coefficient's mean over them.
pub fn mean_normalize(feats: &FeatureMatrix, mask: &VadMask) -> Result<FeatureMatrix> {
    if mask.len() != feats.frames() {
        return Err(FeatureError::MaskLength {
            mask: mask.len(),
            frames: feats.frames(),
        });
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&t| mask.keep[t]).collect();
    if rows.is_empty() {
        return Err(FeatureError::NoKeptFrames);
    }
    let mut kept = feats.values.select(Axis(0), &rows);
    let means = kept.mean_axis(Axis(0)).expect("non-empty");
    kept -= &means;
    Ok(feats.with_values(kept))
}

/// MFCC, VAD and CMN in one pass.
#[derive(Debug)]
pub struct FrontEnd {
    pub extractor: MfccExtractor,
    pub vad: VadConfig,
}

impl Default for FrontEnd {
    fn default() -> Self {
        Self::new(MfccConfig::default(), VadConfig::default())
    }
}

impl FrontEnd {
    pub fn new(mfcc: MfccConfig, vad: VadConfig) -> Self {
        Self {
            extractor: MfccExtractor::new(mfcc),
            vad,
        }
    }

    pub fn process(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let raw = self.extractor.compute(wave)?;
        let vad = energy_vad(&raw, &self.vad);
        mean_normalize(&raw, &vad.mask)
    }
}

/// Writes `T`, `D` as little-endian u32 followed by `T*D` little-endian f32, row-major.
pub fn write_feature_cache(feats: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: std::io::Error| FeatureError::Cache {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut bytes = Vec::with_capacity(8 + 4 * feats.values.len());
    bytes.extend_from_slice(&(feats.frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(feats.dim() as u32).to_le_bytes());
    for v in feats.values.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(err)?;
    f.write_all(&bytes).map_err(err)
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let fail = |reason: String| FeatureError::Cache {
        path: path.display().to_string(),
        reason,
    };
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| fail(e.to_string()))?;
    if bytes.len() < 8 {
        return Err(fail("truncated header".into()));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 4 * t * d {
        return Err(fail(format!(
            "expected {} payload bytes for {t}x{d}, found {}",
            4 * t * d,
            bytes.len() - 8
        )));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let values = Array2::from_shape_vec((t, d), values).map_err(|e| fail(e.to_string()))?;
    FeatureMatrix::from_values(values).map_err(|e| fail(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16000).unwrap()
    }

    fn tone(secs: f64, amp: f64) -> Vec<f64> {
        let n = (secs * 16000.0) as usize;
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 300.0 * i as f64 / 16000.0).sin())
            .collect()
    }

    /// Straightforward recipe with an O(N^2) DFT, written independently of the extractor.
    fn reference_mfcc(samples: &[f64]) -> Vec<Vec<f64>> {
        use std::f64::consts::PI;
        let (frame_len, shift, nfft, nmel) = (400usize, 160usize, 512usize, 23usize);
        let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
        let (lo, hi) = (mel(20.0), mel(7600.0));
        let step = (hi - lo) / 24.0;
        let t_count = 1 + (samples.len() - frame_len) / shift;
        let mut out = Vec::new();
        for t in 0..t_count {
            let mut x: Vec<f64> = samples[t * shift..t * shift + frame_len].to_vec();
            let m = x.iter().sum::<f64>() / frame_len as f64;
            for v in x.iter_mut() {
                *v -= m;
            }
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let mut y = vec![0.0; frame_len];
            y[0] = x[0] - 0.97 * x[0];
            for i in 1..frame_len {
                y[i] = x[i] - 0.97 * x[i - 1];
            }
            for (i, v) in y.iter_mut().enumerate() {
                *v *= 0.54 - 0.46 * (2.0 * PI * i as f64 / 399.0).cos();
            }
            let mut spec = vec![0.0; nfft / 2 + 1];
            for (k, s) in spec.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in y.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                *s = (re * re + im * im).sqrt();
            }
            let mut logmel = vec![0.0; nmel];
            for (j, lm) in logmel.iter_mut().enumerate() {
                let (l, c, r) = (
                    lo + j as f64 * step,
                    lo + (j + 1) as f64 * step,
                    lo + (j + 2) as f64 * step,
                );
                let mut e = 0.0;
                for (k, s) in spec.iter().enumerate() {
                    let f = mel(k as f64 * 16000.0 / nfft as f64);
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    e += w * s;
                }
                *lm = e.max(1e-10).ln();
            }
            let mut ceps = vec![0.0; nmel];
            for (k, cv) in ceps.iter_mut().enumerate() {
                let scale = if k == 0 {
                    (1.0 / 23.0f64).sqrt()
                } else {
                    (2.0 / 23.0f64).sqrt()
                };
                *cv = scale
                    * logmel
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v * (PI * k as f64 * (j as f64 + 0.5) / 23.0).cos())
                        .sum::<f64>();
            }
            ceps[0] = energy.max(1e-10).ln();
            out.push(ceps);
        }
        out
    }

    #[test]
    fn one_second_gives_98_frames() {
        let f = compute_mfcc(&wave(tone(1.0, 0.3)), &MfccConfig::default()).unwrap();
        assert_eq!(f.frames(), 98);
        assert_eq!(f.dim(), 23);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(matches!(
            compute_mfcc(&wave(vec![0.1; 399]), &MfccConfig::default()),
            Err(FeatureError::TooShort { .. })
        ));
    }

    #[test]
    fn silence_sits_at_floor() {
        let f = compute_mfcc(&wave(vec![0.0; 4000]), &MfccConfig::default()).unwrap();
        let floor = 1e-10f64.ln();
        for row in f.values().rows() {
            assert!((row[0] - floor).abs() < 1e-12);
            // every log-mel energy is at the floor, so only the DC cepstral term is non-zero
            for k in 1..23 {
                assert!(row[k].abs() < 1e-9);
            }
        }
        assert!(f.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn matches_naive_dft_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..2400)
            .map(|i| 0.3 * (i as f64 * 0.07).sin() + rng.gen_range(-0.1..0.1))
            .collect();
        let fast = compute_mfcc(&wave(samples.clone()), &MfccConfig::default()).unwrap();
        let slow = reference_mfcc(&samples);
        assert_eq!(fast.frames(), slow.len());
        for (t, row) in slow.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert!(
                    (fast.values()[(t, k)] - v).abs() < 1e-6,
                    "frame {t} coef {k}: {} vs {v}",
                    fast.values()[(t, k)]
                );
            }
        }
    }

    #[test]
    fn deterministic_bit_identical() {
        let w = wave(tone(0.5, 0.2));
        let a = compute_mfcc(&w, &MfccConfig::default()).unwrap();
        let b = compute_mfcc(&w, &MfccConfig::default()).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    fn tone_then_silence() -> Waveform {
        let mut s = tone(2.0, 0.5);
        s.extend(std::iter::repeat_n(0.0, 32000));
        wave(s)
    }

    #[test]
    fn vad_separates_tone_from_silence() {
        let f = compute_mfcc(&tone_then_silence(), &MfccConfig::default()).unwrap();
        let out = energy_vad(&f, &VadConfig::default());
        assert!(!out.fallback);
        let keep = out.mask.keep();
        // frames wholly inside the tone / wholly inside the silence
        let tone_frames: Vec<bool> = keep[..198].to_vec();
        let silent_frames: Vec<bool> = keep[201..].to_vec();
        let kept_tone =
            tone_frames.iter().filter(|k| **k).count() as f64 / tone_frames.len() as f64;
        let dropped_sil =
            silent_frames.iter().filter(|k| !**k).count() as f64 / silent_frames.len() as f64;
        assert!(kept_tone >= 0.9, "{kept_tone}");
        assert!(dropped_sil >= 0.9, "{dropped_sil}");
    }

    #[test]
    fn vad_mask_unchanged_by_gain() {
        let base = tone_then_silence();
        let cfg = MfccConfig::default();
        let reference = energy_vad(&compute_mfcc(&base, &cfg).unwrap(), &VadConfig::default());
        for g in [0.5, 2.0] {
            let f = compute_mfcc(&base.scaled(g), &cfg).unwrap();
            let shift = f.values()[(0, 0)] - compute_mfcc(&base, &cfg).unwrap().values()[(0, 0)];
            assert!((shift - 2.0 * f64::ln(g)).abs() < 1e-9);
            assert_eq!(energy_vad(&f, &VadConfig::default()).mask, reference.mask);
        }
    }

    #[test]
    fn vad_constant_energy_shares_fate() {
        let f = FeatureMatrix::from_values(Array2::from_elem((20, 23), -30.0)).unwrap();
        let out = energy_vad(&f, &VadConfig::default());
        assert_eq!(out.mask.kept(), 20);
        let f = FeatureMatrix::from_values(Array2::from_elem((20, 23), 1.0)).unwrap();
        let out = energy_vad(&f, &VadConfig::default());
        assert_eq!(out.mask.kept(), 20);
        assert!(!out.fallback);
    }

    #[test]
    fn vad_falls_back_on_pure_silence() {
        let f = compute_mfcc(&wave(vec![0.0; 16000]), &MfccConfig::default()).unwrap();
        let out = energy_vad(&f, &VadConfig::default());
        assert!(out.fallback);
        assert_eq!(out.mask.kept(), f.frames());
    }

    #[test]
    fn cmn_zeroes_column_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Array2::from_shape_fn((50, 23), |_| rng.gen_range(-5.0..5.0));
        let f = FeatureMatrix::from_values(m.clone()).unwrap();
        let out = mean_normalize(&f, &VadMask::all(50)).unwrap();
        for c in 0..23 {
            let mean: f64 = (0..50).map(|t| m[(t, c)]).sum::<f64>() / 50.0;
            assert!(out.values().column(c).sum().abs() / 50.0 < 1e-9);
            for t in 0..50 {
                assert!((out.values()[(t, c)] - (m[(t, c)] - mean)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cmn_single_frame_and_errors() {
        let f = FeatureMatrix::from_values(Array2::from_elem((3, 23), 2.0)).unwrap();
        let mut keep = vec![false; 3];
        keep[1] = true;
        let out = mean_normalize(&f, &VadMask::new(keep)).unwrap();
        assert_eq!(out.frames(), 1);
        assert!(out.values().iter().all(|v| *v == 0.0));
        assert!(matches!(
            mean_normalize(&f, &VadMask::new(vec![false; 3])),
            Err(FeatureError::NoKeptFrames)
        ));
        assert!(matches!(
            mean_normalize(&f, &VadMask::all(4)),
            Err(FeatureError::MaskLength { .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.feat");
        let f = FeatureMatrix::from_values(Array2::from_shape_fn((7, 23), |(t, c)| {
            (t * 23 + c) as f64 * 0.25
        }))
        .unwrap();
        write_feature_cache(&f, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 8 + 7 * 23 * 4);
        assert_eq!(&bytes[0..4], &7u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &23u32.to_le_bytes());
        assert_eq!(read_feature_cache(&p).unwrap(), f);
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(read_feature_cache(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn frame_count_formula(n in 400usize..20000) {
            let f = compute_mfcc(&wave(vec![0.01; n]), &MfccConfig::default()).unwrap();
            prop_assert_eq!(f.frames(), 1 + (n - 400) / 160);
        }

        #[test]
        fn cmn_is_idempotent(seed in any::<u64>(), t in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_fn((t, 23), |_| rng.gen_range(-10.0..10.0));
            let f = FeatureMatrix::from_values(m).unwrap();
            let once = mean_normalize(&f, &VadMask::all(t)).unwrap();
            let twice = mean_normalize(&once, &VadMask::all(t)).unwrap();
            for (a, b) in once.values().iter().zip(twice.values().iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
