//! Deterministic synthetic emotion corpus and stand-in noise and music files.
//!
//! Every utterance is a harmonic tone with syllable-like amplitude modulation, framed by
//! low-level background noise. The neutral class uses the baseline signature throughout.
//! Each other class changes pitch, modulation rate, spectral tilt and level, but only inside a
//! random sub-span of the utterance; the rest stays neutral. Speakers shift pitch and tilt
//! persistently.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::audio::{self, AudioError, Waveform};
use crate::corpus::{self, AudioRef, CorpusError, EmotionLabel, LabelSet, Split, Utterance};
use crate::noiseaug::{NoiseCorpus, NoiseFile, NoiseTag};
use crate::seeding::{derive_seed, rng_from};

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Acoustic signature of one class, applied inside its emotional span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signature {
    /// Pitch multiplier relative to the speaker's baseline.
    pub pitch: f64,
    /// Amplitude-modulation rate in Hz.
    pub am_rate_hz: f64,
    /// Spectral tilt in dB per octave.
    pub tilt_db: f64,
    /// Level change in dB.
    pub gain_db: f64,
}

pub const NEUTRAL_SIGNATURE: Signature = Signature {
    pitch: 1.0,
    am_rate_hz: 3.0,
    tilt_db: -9.0,
    gain_db: 0.0,
};

/// Signatures for up to eight emotional classes, cycled if more are requested.
const EMOTION_SIGNATURES: [Signature; 8] = [
    Signature {
        pitch: 1.05,
        am_rate_hz: 7.0,
        tilt_db: -8.0,
        gain_db: 6.0,
    },
    Signature {
        pitch: 1.3,
        am_rate_hz: 5.0,
        tilt_db: -7.0,
        gain_db: 2.5,
    },
    Signature {
        pitch: 0.9,
        am_rate_hz: 1.8,
        tilt_db: -13.0,
        gain_db: -3.0,
    },
    Signature {
        pitch: 1.0,
        am_rate_hz: 6.0,
        tilt_db: -5.0,
        gain_db: 3.0,
    },
    Signature {
        pitch: 1.25,
        am_rate_hz: 2.2,
        tilt_db: -10.0,
        gain_db: -2.0,
    },
    Signature {
        pitch: 0.9,
        am_rate_hz: 4.5,
        tilt_db: -6.0,
        gain_db: -3.0,
    },
    Signature {
        pitch: 1.45,
        am_rate_hz: 3.5,
        tilt_db: -8.0,
        gain_db: 2.0,
    },
    Signature {
        pitch: 0.75,
        am_rate_hz: 5.5,
        tilt_db: -7.0,
        gain_db: -4.0,
    },
];

const DEFAULT_CLASS_NAMES: [&str; 4] = ["neutral", "angry", "happy", "sad"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_speakers: usize,
    pub utts_per_speaker_per_class: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
    /// Fraction of the utterance an emotional span covers, drawn uniformly from this range.
    pub span_fraction: (f64, f64),
    /// Scales how far emotional signatures move from neutral; 1 is the nominal contrast.
    pub contrast: f64,
    /// Standard deviation of the per-utterance jitter applied to every signature parameter,
    /// relative to its nominal value.
    pub jitter: f64,
    /// Range of speaker base pitch in Hz.
    pub speaker_f0_hz: (f64, f64),
    /// Speakers shift spectral tilt by up to this many dB per octave either way.
    pub speaker_tilt_spread_db: f64,
    /// RMS of the background noise under the whole file.
    pub background_rms: f64,
    /// Strength of per-syllable formant variation; 0 gives a steady timbre.
    pub phonetic_variation: f64,
    /// Speaker fractions assigned to train and dev; the remainder is test.
    pub split_fractions: (f64, f64),
    /// Number of cross-validation sessions speakers are spread across.
    pub sessions: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_speakers: 20,
            utts_per_speaker_per_class: 5,
            min_duration_s: 2.0,
            max_duration_s: 6.0,
            sample_rate_hz: audio::DEFAULT_SAMPLE_RATE,
            seed: 7,
            span_fraction: (0.3, 0.6),
            contrast: 1.5,
            jitter: 0.04,
            speaker_f0_hz: (110.0, 170.0),
            speaker_tilt_spread_db: 1.0,
            background_rms: 0.002,
            phonetic_variation: 2.0,
            split_fractions: (0.6, 0.2),
            sessions: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n_speakers == 0 || self.utts_per_speaker_per_class == 0 {
            return bad("speaker and utterance counts must be positive");
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return bad("durations must be positive and ordered");
        }
        if self.sample_rate_hz < 8000 {
            return bad("sample rate must be at least 8 kHz");
        }
        let (lo, hi) = self.span_fraction;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad("span fractions must satisfy 0 < lo <= hi <= 1");
        }
        let (tr, dv) = self.split_fractions;
        if !(tr > 0.0 && dv >= 0.0 && tr + dv <= 1.0) {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        if self.sessions == 0 {
            return bad("sessions must be positive");
        }
        if !(self.contrast >= 0.0 && self.jitter >= 0.0) {
            return bad("contrast and jitter must be non-negative");
        }
        let (f_lo, f_hi) = self.speaker_f0_hz;
        if !(f_lo > 0.0 && f_lo <= f_hi && f_hi < MAX_HARMONIC_HZ) {
            return bad("speaker pitch range must be positive and ordered");
        }
        if !(self.speaker_tilt_spread_db >= 0.0
            && self.background_rms >= 0.0
            && self.phonetic_variation >= 0.0)
        {
            return bad("speaker tilt spread and background level must be non-negative");
        }
        Ok(())
    }

    pub fn labels(&self) -> LabelSet {
        let names: Vec<String> = (0..self.n_classes)
            .map(|k| match DEFAULT_CLASS_NAMES.get(k) {
                Some(n) => n.to_string(),
                None => format!("emotion{k}"),
            })
            .collect();
        LabelSet::from_names(&names, "neutral").expect("names are distinct")
    }

    fn signature(&self, class: usize) -> Signature {
        if class == 0 {
            return NEUTRAL_SIGNATURE;
        }
        let target = EMOTION_SIGNATURES[(class - 1) % EMOTION_SIGNATURES.len()];
        let n = NEUTRAL_SIGNATURE;
        let c = self.contrast;
        Signature {
            pitch: n.pitch + c * (target.pitch - n.pitch),
            am_rate_hz: n.am_rate_hz + c * (target.am_rate_hz - n.am_rate_hz),
            tilt_db: n.tilt_db + c * (target.tilt_db - n.tilt_db),
            gain_db: n.gain_db + c * (target.gain_db - n.gain_db),
        }
    }
}

/// Persistent per-speaker traits.
#[derive(Debug, Clone, Copy)]
struct Speaker {
    f0_hz: f64,
    tilt_offset_db: f64,
    am_offset_hz: f64,
}

fn speaker_traits(config: &SynthConfig, index: usize) -> Speaker {
    let mut rng = rng_from(derive_seed(
        config.seed,
        &[b"speaker", &(index as u64).to_le_bytes()],
    ));
    let (lo, hi) = config.speaker_f0_hz;
    let tilt = config.speaker_tilt_spread_db;
    Speaker {
        f0_hz: rng.gen_range(lo..=hi),
        tilt_offset_db: rng.gen_range(-tilt..=tilt),
        am_offset_hz: rng.gen_range(-0.5..0.5),
    }
}

fn jittered<R: Rng>(sig: Signature, jitter: f64, rng: &mut R) -> Signature {
    let n = Normal::new(1.0, jitter.max(1e-12)).expect("valid sigma");
    Signature {
        pitch: sig.pitch * n.sample(rng),
        am_rate_hz: sig.am_rate_hz * n.sample(rng),
        tilt_db: sig.tilt_db * n.sample(rng),
        gain_db: sig.gain_db * n.sample(rng),
    }
}

/// Highest harmonic frequency rendered.
const MAX_HARMONIC_HZ: f64 = 5000.0;
const VOICED_PEAK: f64 = 0.3;
const AM_DEPTH: f64 = 0.6;
/// Length of the crossfade between baseline and emotional signatures.
const RAMP_S: f64 = 0.05;

/// Spectral colouring of one syllable: two resonances standing in for the phonetic
/// variation of speech.
#[derive(Debug, Clone, Copy)]
struct Syllable {
    formants_hz: [f64; 2],
    strength: f64,
}

impl Syllable {
    const BANDWIDTH_HZ: f64 = 150.0;

    fn draw<R: Rng>(variation: f64, rng: &mut R) -> Self {
        let f1 = rng.gen_range(300.0..900.0);
        let f2 = rng.gen_range(1000.0..2600.0);
        Syllable {
            formants_hz: [f1, f2],
            strength: 4.0 * variation,
        }
    }

    fn gain(&self, freq_hz: f64) -> f64 {
        1.0 + self
            .formants_hz
            .iter()
            .map(|f| {
                let x = (freq_hz - f) / Self::BANDWIDTH_HZ;
                self.strength / (1.0 + x * x)
            })
            .sum::<f64>()
    }
}

/// Renders one utterance. `span` is the emotional region in samples of the voiced part,
/// `None` for neutral.
#[allow(clippy::too_many_arguments)]
fn render<R: Rng>(
    sr: f64,
    voiced_len: usize,
    lead: usize,
    trail: usize,
    config: &SynthConfig,
    speaker: Speaker,
    base: Signature,
    emo: Signature,
    span: Option<(usize, usize)>,
    rng: &mut R,
) -> Vec<f64> {
    let total = lead + voiced_len + trail;
    let bg = Normal::new(0.0, config.background_rms.max(1e-12)).expect("valid sigma");
    let mut out: Vec<f64> = (0..total).map(|_| bg.sample(rng)).collect();
    let ramp = (RAMP_S * sr) as usize;
    let blend_at = |i: usize| -> f64 {
        match span {
            None => 0.0,
            Some((a, b)) => {
                let up = if i < a {
                    0.0
                } else {
                    ((i - a) as f64 / ramp.max(1) as f64).min(1.0)
                };
                let down = if i >= b {
                    0.0
                } else {
                    ((b - i) as f64 / ramp.max(1) as f64).min(1.0)
                };
                up.min(down)
            }
        }
    };
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut am_phase = rng.gen_range(0.0..2.0 * PI);
    let edge = (0.02 * sr) as usize;
    let mut syllable = Syllable::draw(config.phonetic_variation, rng);
    let mut amps: Vec<f64> = Vec::new();
    let mut amps_key = (f64::NAN, f64::NAN);
    let mut amps_norm = 1.0;
    for i in 0..voiced_len {
        let b = blend_at(i);
        let lerp = |x: f64, y: f64| x + b * (y - x);
        let f0 = speaker.f0_hz * lerp(base.pitch, emo.pitch);
        let am = (lerp(base.am_rate_hz, emo.am_rate_hz) + speaker.am_offset_hz).max(0.5);
        let tilt = lerp(base.tilt_db, emo.tilt_db) + speaker.tilt_offset_db;
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let next_am = am_phase + 2.0 * PI * am / sr;
        if next_am >= 2.0 * PI {
            // a new modulation cycle starts a new syllable
            syllable = Syllable::draw(config.phonetic_variation, rng);
            amps_key = (f64::NAN, f64::NAN);
        }
        am_phase = next_am % (2.0 * PI);

        // sin(k phase) by the Chebyshev recurrence
        let (s1, c1) = phase.sin_cos();
        let two_c = 2.0 * c1;
        let (mut prev, mut cur) = (0.0, s1);
        if (tilt, f0) != amps_key {
            amps_key = (tilt, f0);
            let n_harm = ((MAX_HARMONIC_HZ / f0).floor() as usize).max(1);
            amps.clear();
            amps.extend((1..=n_harm).map(|k| {
                10f64.powf(tilt * (k as f64).log2() / 20.0) * syllable.gain(k as f64 * f0)
            }));
            amps_norm = amps.iter().sum();
        }
        let norm = amps_norm;
        let mut acc = 0.0;
        for amp in &amps {
            acc += amp * cur;
            let next = two_c * cur - prev;
            prev = cur;
            cur = next;
        }
        let env = 1.0 - AM_DEPTH * 0.5 * (1.0 + am_phase.cos());
        let level = 10f64.powf(lerp(base.gain_db, emo.gain_db) / 20.0);
        let fade = (i.min(voiced_len - 1 - i) as f64 / edge.max(1) as f64).min(1.0);
        out[lead + i] += VOICED_PEAK * level * fade * env * acc / norm * 2.0;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        out.iter_mut().for_each(|v| *v *= 0.95 / peak);
    }
    out
}

/// Details of how a synthetic utterance was built.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthInfo {
    pub id: String,
    /// Emotional span in seconds from the start of the file, if any.
    pub span_s: Option<(f64, f64)>,
}

/// Speaker split and session, by speaker index.
fn speaker_plan(config: &SynthConfig) -> Vec<(Split, String)> {
    let mut order: Vec<usize> = (0..config.n_speakers).collect();
    order.shuffle(&mut rng_from(derive_seed(config.seed, &[b"speaker-split"])));
    let n = config.n_speakers as f64;
    let n_train = (config.split_fractions.0 * n).round() as usize;
    let n_dev = (config.split_fractions.1 * n).round() as usize;
    let mut plan = vec![(Split::Train, String::new()); config.n_speakers];
    for (rank, &spk) in order.iter().enumerate() {
        let split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        plan[spk] = (
            split,
            format!("sess{}", rank * config.sessions / config.n_speakers),
        );
    }
    plan
}

/// Builds the corpus in memory. Utterances carry inline audio.
pub fn synthesize_corpus(config: &SynthConfig) -> Result<(Vec<Utterance>, Vec<SynthInfo>)> {
    config.validate()?;
    let labels = config.labels();
    let plan = speaker_plan(config);
    let sr = config.sample_rate_hz as f64;
    let mut utts = Vec::new();
    let mut infos = Vec::new();
    for (spk, (split, session)) in plan.iter().enumerate() {
        let speaker = speaker_traits(config, spk);
        for (class, label) in labels.labels().iter().enumerate() {
            for j in 0..config.utts_per_speaker_per_class {
                let id = format!("spk{spk:02}_{}_{j:02}", label.name);
                let mut rng = rng_from(derive_seed(config.seed, &[b"utt", id.as_bytes()]));
                let dur = rng.gen_range(config.min_duration_s..=config.max_duration_s);
                let lead_s = rng.gen_range(0.1..0.4);
                let trail_s = rng.gen_range(0.1..0.4);
                let voiced_s = (dur - lead_s - trail_s).max(0.5);
                let voiced = (voiced_s * sr) as usize;
                let (lead, trail) = ((lead_s * sr) as usize, (trail_s * sr) as usize);
                let base = jittered(NEUTRAL_SIGNATURE, config.jitter, &mut rng);
                let emo = jittered(config.signature(class), config.jitter, &mut rng);
                let span = if label.is_neutral {
                    None
                } else {
                    let (lo, hi) = config.span_fraction;
                    let frac = rng.gen_range(lo..=hi);
                    let len = ((frac * voiced as f64) as usize).clamp(1, voiced);
                    let start = rng.gen_range(0..=voiced - len);
                    Some((start, start + len))
                };
                let samples = render(
                    sr, voiced, lead, trail, config, speaker, base, emo, span, &mut rng,
                );
                let wave = Waveform::new(samples, config.sample_rate_hz)?;
                infos.push(SynthInfo {
                    id: id.clone(),
                    span_s: span.map(|(a, b)| ((lead + a) as f64 / sr, (lead + b) as f64 / sr)),
                });
                utts.push(Utterance {
                    id,
                    speaker_id: format!("spk{spk:02}"),
                    label: label.clone(),
                    split: *split,
                    audio: AudioRef::Inline(Arc::new(wave)),
                    session: Some(session.clone()),
                });
            }
        }
    }
    Ok((utts, infos))
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the corpus under `dir` as `wav/<id>.wav` plus `manifest.tsv`, and returns the
/// utterances with file-backed audio.
pub fn generate_corpus(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let dir = dir.as_ref();
    let (utts, _) = synthesize_corpus(config)?;
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| io_err(&wav_dir, e))?;
    let mut rows = Vec::with_capacity(utts.len());
    for u in utts {
        let rel = PathBuf::from("wav").join(format!("{}.wav", u.id));
        if let AudioRef::Inline(w) = &u.audio {
            audio::write_wav(w, dir.join(&rel))?;
        }
        rows.push(Utterance {
            audio: AudioRef::Path(rel),
            ..u
        });
    }
    corpus::write_manifest(&rows, dir.join("manifest.tsv"))?;
    Ok(rows
        .into_iter()
        .map(|u| match u.audio {
            AudioRef::Path(p) => Utterance {
                audio: AudioRef::Path(dir.join(p)),
                ..u
            },
            inline => Utterance { audio: inline, ..u },
        })
        .collect())
}

pub const NOISE_FILES_PER_TAG: usize = 10;

fn filtered_noise<R: Rng>(sr: f64, len: usize, rng: &mut R) -> Vec<f64> {
    // white noise through a one-pole high-pass then a one-pole low-pass
    let lo_hz = rng.gen_range(50.0..800.0);
    let hi_hz = rng.gen_range(lo_hz * 2.0..7000.0f64.max(lo_hz * 2.5));
    let a_hp = (-2.0 * PI * lo_hz / sr).exp();
    let a_lp = (-2.0 * PI * hi_hz / sr).exp();
    let (mut hp_prev_in, mut hp_prev_out, mut lp) = (0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let hp = a_hp * (hp_prev_out + x - hp_prev_in);
        hp_prev_in = x;
        hp_prev_out = hp;
        lp = (1.0 - a_lp) * hp + a_lp * lp;
        out.push(lp);
    }
    out
}

fn arpeggio<R: Rng>(sr: f64, len: usize, rng: &mut R) -> Vec<f64> {
    const MAJOR: [i32; 3] = [0, 4, 7];
    const MINOR: [i32; 3] = [0, 3, 7];
    let note_len = (rng.gen_range(0.12..0.3) * sr) as usize;
    let mut out = vec![0.0; len];
    let mut start = 0;
    let mut root = rng.gen_range(45..60);
    let mut step = 0usize;
    while start < len {
        if step.is_multiple_of(8) {
            root = rng.gen_range(45..60);
        }
        let chord = if rng.gen_bool(0.5) { MAJOR } else { MINOR };
        let midi = root + chord[step % 3] + 12 * ((step / 3) % 2) as i32;
        let f = 440.0 * 2f64.powf((midi as f64 - 69.0) / 12.0);
        let end = (start + note_len).min(len);
        for (n, v) in out[start..end].iter_mut().enumerate() {
            let t = n as f64 / sr;
            let env = (-t * 6.0).exp() * (n as f64 / (0.005 * sr)).min(1.0);
            let tone: f64 = (1..=4)
                .map(|h| (2.0 * PI * f * h as f64 * t).sin() / h as f64)
                .sum();
            *v += env * tone;
        }
        start = end;
        step += 1;
    }
    out
}

fn normalize_peak(mut v: Vec<f64>, peak: f64) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x *= peak / m);
    }
    v
}

/// Ten filtered-noise and ten chord-arpeggio files of 10 to 30 seconds, in memory.
pub fn synthesize_noise_proxy(config: &SynthConfig) -> Result<NoiseCorpus> {
    config.validate()?;
    let sr = config.sample_rate_hz as f64;
    let mut corpus = NoiseCorpus::default();
    for tag in NoiseTag::ALL {
        for i in 0..NOISE_FILES_PER_TAG {
            let name = format!("{tag}{i:02}");
            let mut rng = rng_from(derive_seed(config.seed, &[b"noise-proxy", name.as_bytes()]));
            let len = (rng.gen_range(10.0..=30.0) * sr) as usize;
            let samples = match tag {
                NoiseTag::Noise => filtered_noise(sr, len, &mut rng),
                NoiseTag::Music => arpeggio(sr, len, &mut rng),
            };
            let wave = Waveform::new(normalize_peak(samples, 0.5), config.sample_rate_hz)?;
            corpus.push(
                tag,
                NoiseFile {
                    name,
                    wave: Arc::new(wave),
                },
            );
        }
    }
    Ok(corpus)
}

/// Writes the noise proxy under `dir` as `<name>.wav` plus a `noise.txt` tag manifest.
pub fn generate_noise_proxy(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let corpus = synthesize_noise_proxy(config)?;
    let mut manifest = String::new();
    for tag in NoiseTag::ALL {
        for f in corpus.files(tag) {
            let file = format!("{}.wav", f.name);
            audio::write_wav(&f.wave, dir.join(&file))?;
            manifest.push_str(&format!("{tag} {file}\n"));
        }
    }
    let path = dir.join("noise.txt");
    fs::write(&path, manifest).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// The label of a synthetic utterance, for callers that only have its id.
pub fn label_from_id<'a>(labels: &'a LabelSet, id: &str) -> Option<&'a EmotionLabel> {
    labels.get(id.split('_').nth(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_mfcc, energy_vad, MfccConfig, VadConfig};
    use std::collections::{BTreeMap, BTreeSet};

    fn small() -> SynthConfig {
        SynthConfig {
            n_speakers: 5,
            utts_per_speaker_per_class: 2,
            min_duration_s: 1.0,
            max_duration_s: 1.5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_counts_and_speaker_disjoint_splits() {
        let cfg = SynthConfig {
            min_duration_s: 0.6,
            max_duration_s: 0.6,
            ..SynthConfig::default()
        };
        let (utts, infos) = synthesize_corpus(&cfg).unwrap();
        assert_eq!(utts.len(), 400);
        assert_eq!(infos.len(), 400);
        let count = |s| utts.iter().filter(|u| u.split == s).count();
        assert_eq!(
            (count(Split::Train), count(Split::Dev), count(Split::Test)),
            (240, 80, 80)
        );
        let mut split_of: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for u in &utts {
            split_of.entry(&u.speaker_id).or_default().insert(u.split);
        }
        assert!(split_of.values().all(|s| s.len() == 1));
        let sessions: BTreeSet<_> = utts.iter().map(|u| u.session.clone().unwrap()).collect();
        assert_eq!(sessions.len(), 5);
        corpus::validate_corpus(&utts).unwrap();
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(&small(), a.path()).unwrap();
        generate_corpus(&small(), b.path()).unwrap();
        let ma = fs::read(a.path().join("manifest.tsv")).unwrap();
        assert_eq!(ma, fs::read(b.path().join("manifest.tsv")).unwrap());
        for line in String::from_utf8(ma).unwrap().lines() {
            let rel = line.split('\t').nth(1).unwrap();
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap()
            );
        }
        let other = tempfile::tempdir().unwrap();
        generate_corpus(&SynthConfig { seed: 8, ..small() }, other.path()).unwrap();
        assert_ne!(
            fs::read(a.path().join("wav/spk00_neutral_00.wav")).unwrap(),
            fs::read(other.path().join("wav/spk00_neutral_00.wav")).unwrap()
        );
    }

    #[test]
    fn manifest_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let written = generate_corpus(&cfg, dir.path()).unwrap();
        let read = corpus::read_manifest(dir.path().join("manifest.tsv"), &cfg.labels()).unwrap();
        assert_eq!(read, written);
        let w = read[0].load_audio().unwrap();
        assert_eq!(w.sample_rate_hz(), 16000);
    }

    #[test]
    fn spans_cover_the_configured_fraction() {
        let (utts, infos) = synthesize_corpus(&small()).unwrap();
        for (u, info) in utts.iter().zip(&infos) {
            match info.span_s {
                None => assert!(u.label.is_neutral),
                Some((a, b)) => {
                    assert!(!u.label.is_neutral);
                    let dur = u.load_audio().unwrap().duration_s();
                    assert!(a >= 0.0 && b <= dur);
                    // span is 30-60% of the voiced part, which is most of the file
                    let frac = (b - a) / dur;
                    assert!(frac > 0.15 && frac <= 0.6, "{frac}");
                }
            }
        }
    }

    #[test]
    fn noise_proxy_files() {
        let cfg = SynthConfig::default();
        let c = synthesize_noise_proxy(&cfg).unwrap();
        for tag in NoiseTag::ALL {
            assert_eq!(c.files(tag).len(), 10);
            for f in c.files(tag) {
                let d = f.wave.duration_s();
                assert!((10.0..=30.0).contains(&d), "{d}");
                assert!(audio::mean_power(&f.wave) > 1e-6);
            }
        }
        assert_eq!(synthesize_noise_proxy(&cfg).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_noise_proxy(&cfg, dir.path()).unwrap();
        let loaded = NoiseCorpus::load(manifest).unwrap();
        assert_eq!(loaded.noise.len() + loaded.music.len(), 20);
    }

    #[test]
    fn nearest_centroid_on_mean_mfcc_separates_classes() {
        let cfg = SynthConfig::default();
        let (utts, _) = synthesize_corpus(&cfg).unwrap();
        let mfcc = MfccConfig::default();
        let labels = cfg.labels();
        // mean over speech frames, before mean normalization
        let mean_of = |u: &Utterance| {
            let f = compute_mfcc(&u.load_audio().unwrap(), &mfcc).unwrap();
            let mask = energy_vad(&f, &VadConfig::default()).mask;
            let kept: Vec<usize> = (0..f.frames()).filter(|&t| mask.keep()[t]).collect();
            f.values()
                .select(ndarray::Axis(0), &kept)
                .mean_axis(ndarray::Axis(0))
                .unwrap()
        };
        let mut sums = vec![ndarray::Array1::<f64>::zeros(23); labels.len()];
        let mut counts = vec![0usize; labels.len()];
        for u in utts.iter().filter(|u| u.split == Split::Train) {
            let k = labels.index_of(&u.label.name).unwrap();
            sums[k] += &mean_of(u);
            counts[k] += 1;
        }
        let centroids: Vec<_> = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| s / *c as f64)
            .collect();
        let test: Vec<_> = utts.iter().filter(|u| u.split == Split::Test).collect();
        let correct = test
            .iter()
            .filter(|u| {
                let m = mean_of(u);
                let best = (0..centroids.len())
                    .min_by(|&a, &b| {
                        let da = (&m - &centroids[a]).mapv(|v| v * v).sum();
                        let db = (&m - &centroids[b]).mapv(|v| v * v).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                labels.labels()[best] == u.label
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc >= 0.8, "nearest-centroid accuracy {acc}");
    }
}
