//! Noise and music augmentation of training sets, and noisy copies of test sets.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::audio::{self, mix_at_snr, AudioError, Waveform};
use crate::corpus::{AudioRef, Utterance};
use crate::seeding::{derive_seed, rng_from};

#[derive(Error, Debug)]
pub enum NoiseError {
    #[error("no {0} files in the noise corpus")]
    EmptyTag(NoiseTag),
    #[error("noise corpus is empty")]
    EmptyCorpus,
    #[error("SNR must be finite, got {0}")]
    InvalidSnr(f64),
    #[error("unknown noise tag {0:?}, expected noise or music")]
    UnknownTag(String),
    #[error("noise manifest {path} line {line}: {reason}")]
    Manifest {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("utterance {id}: {source}")]
    Audio { id: String, source: AudioError },
}

pub type Result<T> = std::result::Result<T, NoiseError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseTag {
    Noise,
    Music,
}

impl NoiseTag {
    pub const ALL: [NoiseTag; 2] = [NoiseTag::Noise, NoiseTag::Music];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseTag::Noise => "noise",
            NoiseTag::Music => "music",
        }
    }
}

impl fmt::Display for NoiseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseTag {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(NoiseTag::Noise),
            "music" => Ok(NoiseTag::Music),
            other => Err(NoiseError::UnknownTag(other.to_string())),
        }
    }
}

/// SNRs of the training copies, in dB.
pub const DEFAULT_TRAIN_SNRS: [f64; 3] = [10.0, 5.0, 0.0];
/// SNRs of the noisy test sets, in dB.
pub const DEFAULT_TEST_SNRS: [f64; 2] = [10.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFile {
    pub name: String,
    pub wave: Arc<Waveform>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseCorpus {
    pub noise: Vec<NoiseFile>,
    pub music: Vec<NoiseFile>,
}

impl NoiseCorpus {
    pub fn files(&self, tag: NoiseTag) -> &[NoiseFile] {
        match tag {
            NoiseTag::Noise => &self.noise,
            NoiseTag::Music => &self.music,
        }
    }

    pub fn push(&mut self, tag: NoiseTag, file: NoiseFile) {
        match tag {
            NoiseTag::Noise => self.noise.push(file),
            NoiseTag::Music => self.music.push(file),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty() && self.music.is_empty()
    }

    /// Reads `<tag> <path>` lines; relative paths resolve against the manifest's directory.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let text = fs::read_to_string(manifest).map_err(|source| NoiseError::Io {
            path: manifest.display().to_string(),
            source,
        })?;
        let base = manifest.parent().unwrap_or(Path::new(""));
        let mut corpus = NoiseCorpus::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| NoiseError::Manifest {
                path: manifest.display().to_string(),
                line: i + 1,
                reason,
            };
            let mut cols = line.split_whitespace();
            let (Some(tag), Some(path), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(err("expected `<tag> <path>`".into()));
            };
            let tag: NoiseTag = tag.parse().map_err(|e: NoiseError| err(e.to_string()))?;
            let path = PathBuf::from(path);
            let path = if path.is_relative() {
                base.join(path)
            } else {
                path
            };
            let wave = audio::read_wav(&path).map_err(|e| err(e.to_string()))?;
            corpus.push(
                tag,
                NoiseFile {
                    name: path.display().to_string(),
                    wave: Arc::new(wave),
                },
            );
        }
        Ok(corpus)
    }
}

/// How a noisy copy was made, enough to rebuild the added noise exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MixRecord {
    pub id: String,
    pub source_id: String,
    pub tag: NoiseTag,
    pub snr_db: f64,
    pub noise_index: usize,
    pub offset: usize,
    pub gain: f64,
    pub rescale: f64,
}

impl MixRecord {
    /// Tab-separated header matching [`MixRecord::to_line`].
    pub const HEADER: &'static str = "id\tsource\ttag\tsnr_db\tnoise_index\toffset\tgain\trescale";

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:e}\t{:e}",
            self.id,
            self.source_id,
            self.tag,
            self.snr_db,
            self.noise_index,
            self.offset,
            self.gain,
            self.rescale
        )
    }

    /// SNR of a mixture measured against its clean source, undoing any peak rescale.
    pub fn measured_snr_db(&self, clean: &Waveform, mixed: &Waveform) -> f64 {
        let noise: Vec<f64> = mixed
            .samples()
            .iter()
            .zip(clean.samples())
            .map(|(m, c)| m / self.rescale - c)
            .collect();
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        audio::snr_db(audio::mean_power(clean), p_noise)
    }
}

/// Noisy utterances together with how each was mixed.
#[derive(Debug, Clone, Default)]
pub struct NoisySet {
    pub utterances: Vec<Utterance>,
    pub mixes: Vec<MixRecord>,
}

fn snr_suffix(snr_db: f64) -> String {
    format!("{snr_db}")
}

fn noisy_copy(
    utt: &Utterance,
    clean: &Waveform,
    corpus: &NoiseCorpus,
    tag: NoiseTag,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<(Utterance, MixRecord)> {
    let files = corpus.files(tag);
    if files.is_empty() {
        return Err(NoiseError::EmptyTag(tag));
    }
    let noise_index = rng.gen_range(0..files.len());
    let mix = mix_at_snr(clean, &files[noise_index].wave, snr_db, rng).map_err(|source| {
        NoiseError::Audio {
            id: utt.id.clone(),
            source,
        }
    })?;
    let id = format!("{}#{}{}", utt.id, tag, snr_suffix(snr_db));
    let record = MixRecord {
        id: id.clone(),
        source_id: utt.id.clone(),
        tag,
        snr_db,
        noise_index,
        offset: mix.offset,
        gain: mix.gain,
        rescale: mix.rescale,
    };
    let copy = Utterance {
        id,
        audio: AudioRef::Inline(Arc::new(mix.wave)),
        ..utt.clone()
    };
    Ok((copy, record))
}

fn load(utt: &Utterance) -> Result<Arc<Waveform>> {
    utt.load_audio().map_err(|source| NoiseError::Audio {
        id: utt.id.clone(),
        source,
    })
}

fn check_snr(snr_db: f64) -> Result<()> {
    if snr_db.is_finite() {
        Ok(())
    } else {
        Err(NoiseError::InvalidSnr(snr_db))
    }
}

/// The clean training set followed by one copy of it per (tag, SNR) pair.
///
/// Each copy draws its noise file and offset from a seed derived from `seed`, the
/// utterance id, the tag and the SNR, so copies do not depend on processing order.
pub fn build_augmented_trainset(
    train: &[Utterance],
    corpus: &NoiseCorpus,
    snrs: &[f64],
    seed: u64,
) -> Result<NoisySet> {
    for tag in NoiseTag::ALL {
        if corpus.files(tag).is_empty() {
            return Err(NoiseError::EmptyTag(tag));
        }
    }
    snrs.iter().try_for_each(|s| check_snr(*s))?;
    let mut out = NoisySet {
        utterances: train.to_vec(),
        mixes: Vec::new(),
    };
    for tag in NoiseTag::ALL {
        for &snr in snrs {
            for utt in train {
                let clean = load(utt)?;
                let copy_seed = derive_seed(
                    seed,
                    &[
                        utt.id.as_bytes(),
                        tag.as_str().as_bytes(),
                        &snr.to_le_bytes(),
                    ],
                );
                let (copy, record) =
                    noisy_copy(utt, &clean, corpus, tag, snr, &mut rng_from(copy_seed))?;
                out.utterances.push(copy);
                out.mixes.push(record);
            }
        }
    }
    Ok(out)
}

/// One noisy copy of every test utterance at `snr_db`, with the tag drawn uniformly among
/// the tags the corpus has files for.
pub fn make_noisy_testset(
    test: &[Utterance],
    corpus: &NoiseCorpus,
    snr_db: f64,
    seed: u64,
) -> Result<NoisySet> {
    check_snr(snr_db)?;
    let tags: Vec<NoiseTag> = NoiseTag::ALL
        .into_iter()
        .filter(|t| !corpus.files(*t).is_empty())
        .collect();
    if tags.is_empty() {
        return Err(NoiseError::EmptyCorpus);
    }
    let mut out = NoisySet::default();
    for utt in test {
        let clean = load(utt)?;
        let mut rng = rng_from(derive_seed(
            seed,
            &[utt.id.as_bytes(), b"test", &snr_db.to_le_bytes()],
        ));
        let tag = tags[rng.gen_range(0..tags.len())];
        let (copy, record) = noisy_copy(utt, &clean, corpus, tag, snr_db, &mut rng)?;
        out.utterances.push(copy);
        out.mixes.push(record);
    }
    Ok(out)
}

/// Writes every inline utterance of `set` as `<dir>/<id>.wav`, the corpus manifest to
/// `<dir>/<manifest_name>` and the mix records to `<dir>/mixes.tsv`.
pub fn write_noisy_set(set: &NoisySet, dir: impl AsRef<Path>, manifest_name: &str) -> Result<()> {
    let dir = dir.as_ref();
    let io = |path: &Path, source| NoiseError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut rows = Vec::with_capacity(set.utterances.len());
    for utt in &set.utterances {
        let row = match &utt.audio {
            AudioRef::Inline(wave) => {
                let path = dir.join(format!("{}.wav", utt.id));
                audio::write_wav(wave, &path).map_err(|source| NoiseError::Audio {
                    id: utt.id.clone(),
                    source,
                })?;
                Utterance {
                    audio: AudioRef::Path(PathBuf::from(format!("{}.wav", utt.id))),
                    ..utt.clone()
                }
            }
            AudioRef::Path(_) => utt.clone(),
        };
        rows.push(row);
    }
    let manifest = dir.join(manifest_name);
    crate::corpus::write_manifest(&rows, &manifest).map_err(|e| NoiseError::Manifest {
        path: manifest.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    let mut mixes = String::from(MixRecord::HEADER);
    mixes.push('\n');
    for m in &set.mixes {
        mixes.push_str(&m.to_line());
        mixes.push('\n');
    }
    let path = dir.join("mixes.tsv");
    fs::write(&path, mixes).map_err(|e| io(&path, e))
}
