//! Mono PCM waveforms, 16-bit WAV I/O and SNR-calibrated mixing.

use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Peak the mixture is rescaled to when the sum would clip.
pub const RESCALE_PEAK: f64 = 0.99;

#[derive(Error, Debug)]
pub enum AudioError {
    #[error("waveform has no samples")]
    Empty,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("{path}: unsupported channel count {channels}")]
    UnsupportedChannels { path: PathBuf, channels: u16 },
    #[error("{path}: unsupported bit depth {bits}")]
    UnsupportedBitDepth { path: PathBuf, bits: u16 },
    #[error("{path}: unsupported compression or sample format")]
    UnsupportedFormat { path: PathBuf },
    #[error("{path}: malformed wav: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: cannot write wav: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error("noise segment is silent")]
    SilentNoise,
    #[error("signal is silent, SNR is undefined")]
    SilentSignal,
    #[error("sample rate mismatch: signal {signal} Hz, noise {noise} Hz")]
    SampleRateMismatch { signal: u32, noise: u32 },
    #[error("target SNR must be finite, got {0}")]
    InvalidSnr(f64),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono audio with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

fn classify_hound_error(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            AudioError::NotFound(path.to_path_buf())
        }
        hound::Error::Unsupported => AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
        },
        other => AudioError::Malformed {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Reads a 16-bit PCM mono RIFF/WAVE file, scaling samples by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::NotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| classify_hound_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedChannels {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            bits: spec.bits_per_sample,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| classify_hound_error(path, e))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| AudioError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Clamp to [-1, 1], scale by 32768 and round half away from zero.
pub fn quantize_sample(x: f64) -> i16 {
    let v = (x.clamp(-1.0, 1.0) * 32768.0).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let write_err = |e: hound::Error| AudioError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(write_err)?;
    let mut samples = writer.get_i16_writer(wave.samples.len() as u32);
    for &s in &wave.samples {
        samples.write_sample(quantize_sample(s));
    }
    samples.flush().map_err(write_err)?;
    writer.finalize().map_err(write_err)
}

/// Arithmetic mean of squared samples.
pub fn mean_power(wave: &Waveform) -> f64 {
    power_of(&wave.samples)
}

fn power_of(samples: &[f64]) -> f64 {
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

pub fn snr_db(signal_power: f64, noise_power: f64) -> f64 {
    10.0 * (signal_power / noise_power).log10()
}

/// Gain applied to noise of power `noise_power` so that the mixture has the target SNR.
pub fn snr_gain(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / noise_power * 10f64.powf(-snr_db / 10.0)).sqrt()
}

/// Result of [`mix_at_snr`]: the mixture plus what is needed to reconstruct the
/// scaled noise, i.e. `wave / rescale - signal == gain * noise[offset..]`.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub wave: Waveform,
    pub gain: f64,
    pub offset: usize,
    pub rescale: f64,
}

/// Cuts a segment of `len` samples from `noise` starting at `offset`, looping if needed.
pub fn noise_segment(noise: &[f64], offset: usize, len: usize) -> Vec<f64> {
    noise
        .iter()
        .cycle()
        .skip(offset)
        .take(len)
        .copied()
        .collect()
}

/// Adds `noise` to `signal` at `snr_db` measured over the full signal length.
///
/// Noise shorter than the signal is looped, longer noise is cropped; the start offset is
/// drawn uniformly from `rng`. If the sum peaks above 1.0 the whole mixture is rescaled
/// to a peak of [`RESCALE_PEAK`].
pub fn mix_at_snr<R: Rng + ?Sized>(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(AudioError::InvalidSnr(snr_db));
    }
    if signal.sample_rate_hz != noise.sample_rate_hz {
        return Err(AudioError::SampleRateMismatch {
            signal: signal.sample_rate_hz,
            noise: noise.sample_rate_hz,
        });
    }
    let p_signal = mean_power(signal);
    if p_signal <= 0.0 {
        return Err(AudioError::SilentSignal);
    }
    if mean_power(noise) <= 0.0 {
        return Err(AudioError::SilentNoise);
    }
    let n = signal.len();
    let offset = if noise.len() >= n {
        rng.gen_range(0..=noise.len() - n)
    } else {
        rng.gen_range(0..noise.len())
    };
    let segment = noise_segment(&noise.samples, offset, n);
    let p_noise = power_of(&segment);
    if p_noise <= 0.0 {
        return Err(AudioError::SilentNoise);
    }
    let gain = snr_gain(p_signal, p_noise, snr_db);
    let mut mixed: Vec<f64> = signal
        .samples
        .iter()
        .zip(&segment)
        .map(|(s, v)| s + gain * v)
        .collect();
    let peak = mixed.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let rescale = if peak > 1.0 { RESCALE_PEAK / peak } else { 1.0 };
    if rescale != 1.0 {
        mixed.iter_mut().for_each(|s| *s *= rescale);
    }
    Ok(Mixture {
        wave: Waveform {
            samples: mixed,
            sample_rate_hz: signal.sample_rate_hz,
        },
        gain,
        offset,
        rescale,
    })
}
