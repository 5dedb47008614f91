//! Labels, utterances and the tab-separated corpus manifest.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::audio::{self, AudioError, Waveform};

#[derive(Error, Debug)]
pub enum CorpusError {
    #[error("label set needs exactly one neutral label, found {0}")]
    NeutralCount(usize),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("utterance id {0:?} must be non-empty and free of whitespace and ':'")]
    InvalidId(String),
    #[error("{path}:{line}: {reason}")]
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
    #[error(transparent)]
    Audio(#[from] AudioError),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmotionLabel {
    pub name: String,
    pub is_neutral: bool,
}

impl EmotionLabel {
    pub fn new(name: impl Into<String>, is_neutral: bool) -> Self {
        Self {
            name: name.into(),
            is_neutral,
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ordered label set with exactly one neutral label. Class indices follow the order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<EmotionLabel>,
}

impl LabelSet {
    pub fn new(labels: Vec<EmotionLabel>) -> Result<Self> {
        let neutral = labels.iter().filter(|l| l.is_neutral).count();
        if neutral != 1 {
            return Err(CorpusError::NeutralCount(neutral));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.name.as_str()) {
                return Err(CorpusError::DuplicateLabel(l.name.clone()));
            }
        }
        Ok(Self { labels })
    }

    /// Builds a set from names, flagging `neutral` as the neutral class.
    pub fn from_names<S: AsRef<str>>(names: &[S], neutral: &str) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| EmotionLabel::new(n.as_ref(), n.as_ref() == neutral))
                .collect(),
        )
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&EmotionLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn neutral(&self) -> &EmotionLabel {
        self.labels
            .iter()
            .find(|l| l.is_neutral)
            .expect("validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AudioRef {
    Path(PathBuf),
    Inline(Arc<Waveform>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub label: EmotionLabel,
    pub split: Split,
    pub audio: AudioRef,
    /// Cross-validation session, when the corpus defines one.
    pub session: Option<String>,
}

impl Utterance {
    pub fn load_audio(&self) -> std::result::Result<Arc<Waveform>, AudioError> {
        match &self.audio {
            AudioRef::Path(p) => audio::read_wav(p).map(Arc::new),
            AudioRef::Inline(w) => Ok(Arc::clone(w)),
        }
    }
}

pub fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(':') || id.chars().any(char::is_whitespace) {
        return Err(CorpusError::InvalidId(id.to_string()));
    }
    Ok(())
}

/// Checks ids are valid and unique.
pub fn validate_corpus(utts: &[Utterance]) -> Result<()> {
    let mut seen = HashSet::new();
    for u in utts {
        validate_id(&u.id)?;
        if !seen.insert(u.id.as_str()) {
            return Err(CorpusError::DuplicateId(u.id.clone()));
        }
    }
    Ok(())
}

pub fn by_split(utts: &[Utterance], split: Split) -> Vec<Utterance> {
    utts.iter().filter(|u| u.split == split).cloned().collect()
}

/// Writes `id  path  speaker  label  split` lines, plus a sixth `session` column when set.
///
/// Inline utterances are written with the path they are expected to be saved under,
/// `<dir>/<id>.wav`, relative to the manifest's directory.
pub fn write_manifest(utts: &[Utterance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for u in utts {
        let audio_path = match &u.audio {
            AudioRef::Path(p) => p.display().to_string(),
            AudioRef::Inline(_) => format!("{}.wav", u.id),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            u.id, audio_path, u.speaker_id, u.label.name, u.split
        ));
        if let Some(s) = &u.session {
            out.push('\t');
            out.push_str(s);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a manifest. Relative audio paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>, labels: &LabelSet) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let err = |line: usize, reason: String| CorpusError::Manifest {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut utts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 && cols.len() != 6 {
            return Err(err(
                i + 1,
                format!("expected 5 or 6 columns, got {}", cols.len()),
            ));
        }
        let label = labels
            .get(cols[3])
            .cloned()
            .ok_or_else(|| err(i + 1, format!("unknown label {:?}", cols[3])))?;
        let split = cols[4]
            .parse()
            .map_err(|e: CorpusError| err(i + 1, e.to_string()))?;
        let audio_path = PathBuf::from(cols[1]);
        let audio_path = if audio_path.is_relative() {
            base.join(audio_path)
        } else {
            audio_path
        };
        utts.push(Utterance {
            id: cols[0].to_string(),
            speaker_id: cols[2].to_string(),
            label,
            split,
            audio: AudioRef::Path(audio_path),
            session: cols.get(5).map(|s| s.to_string()),
        });
    }
    validate_corpus(&utts)?;
    Ok(utts)
}

/// Label names in a manifest, in order of first appearance.
pub fn manifest_label_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut seen = BTreeSet::new();
    let mut names = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(l) = line.split('\t').nth(3) {
            if seen.insert(l.to_string()) {
                names.push(l.to_string());
            }
        }
    }
    Ok(names)
}
