//! Epoch planning: fixed-size shuffled batches, an exact quota of CopyPaste batches, and
//! per-batch pairing. Plans are plain data and serialize to one line per batch.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::copypaste::{concat_features, concat_label, random_crop, CopyPasteError, Scheme};
use crate::corpus::{EmotionLabel, Utterance};
use crate::features::{FeatureMatrix, FeatureStore};
use crate::seeding;

#[derive(Error, Debug)]
pub enum BatchError {
    #[error("cannot plan an epoch over an empty corpus")]
    EmptyCorpus,
    #[error("batch size must be positive")]
    ZeroBatchSize,
    #[error("augmentation fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("no features for utterance {0:?}")]
    MissingFeatures(String),
    #[error("plan line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    CopyPaste(#[from] CopyPasteError),
}

pub type Result<T> = std::result::Result<T, BatchError>;

#[derive(Debug, Clone, PartialEq)]
pub enum BatchItem {
    Single {
        id: String,
        label: EmotionLabel,
    },
    Concat {
        a: String,
        b: String,
        scheme: Scheme,
        order_swap: bool,
        crop_seed: u64,
        label: EmotionLabel,
    },
}

impl BatchItem {
    pub fn assigned_label(&self) -> &EmotionLabel {
        match self {
            BatchItem::Single { label, .. } | BatchItem::Concat { label, .. } => label,
        }
    }

    /// The utterance this item was built for.
    pub fn primary_id(&self) -> &str {
        match self {
            BatchItem::Single { id, .. } => id,
            BatchItem::Concat { a, .. } => a,
        }
    }

    pub fn is_concat(&self) -> bool {
        matches!(self, BatchItem::Concat { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    Clean,
    NCp,
    SeCp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub kind: BatchKind,
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub batches: Vec<Batch>,
    pub seed: u64,
    pub scheme: Scheme,
    pub aug_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub batch_size: usize,
    pub scheme: Scheme,
    pub aug_fraction: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            scheme: Scheme::None,
            aug_fraction: 0.8,
        }
    }
}

/// Batch counts per kind for an epoch of `n_batches` batches.
///
/// Returns `(n_cp, se_cp, clean)`. The augmented total is `round(aug_fraction * n)`; under
/// N+SE-CP it is split in half with any odd batch going to N-CP.
pub fn quota(n_batches: usize, scheme: Scheme, aug_fraction: f64) -> (usize, usize, usize) {
    let augmented = match scheme {
        Scheme::None => 0,
        _ => ((aug_fraction * n_batches as f64).round() as usize).min(n_batches),
    };
    let (ncp, secp) = match scheme {
        Scheme::None => (0, 0),
        Scheme::NCp => (augmented, 0),
        Scheme::SeCp => (0, augmented),
        Scheme::NPlusSeCp => (augmented - augmented / 2, augmented / 2),
    };
    (ncp, secp, n_batches - augmented)
}

/// Result of pairing one batch. `passthrough` is set when the scheme could not be applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Paired {
    pub items: Vec<BatchItem>,
    pub passthrough: bool,
}

fn singles(batch: &[&Utterance]) -> Vec<BatchItem> {
    batch
        .iter()
        .map(|u| BatchItem::Single {
            id: u.id.clone(),
            label: u.label.clone(),
        })
        .collect()
}

/// Pairs every utterance with a neutral utterance drawn (with replacement) from the batch.
pub fn pair_ncp<R: Rng + ?Sized>(batch: &[&Utterance], rng: &mut R) -> Paired {
    let neutrals: Vec<&Utterance> = batch
        .iter()
        .copied()
        .filter(|u| u.label.is_neutral)
        .collect();
    if neutrals.is_empty() {
        log::warn!(
            "N-CP batch of {} has no neutral utterance, passing through",
            batch.len()
        );
        return Paired {
            items: singles(batch),
            passthrough: true,
        };
    }
    let items = batch
        .iter()
        .map(|x| {
            let partner = neutrals[rng.gen_range(0..neutrals.len())];
            let order_swap = rng.gen::<bool>();
            let crop_seed = rng.gen::<u64>();
            let label =
                concat_label(&x.label, &partner.label, Scheme::NCp).expect("partner is neutral");
            BatchItem::Concat {
                a: x.id.clone(),
                b: partner.id.clone(),
                scheme: Scheme::NCp,
                order_swap,
                crop_seed,
                label,
            }
        })
        .collect();
    Paired {
        items,
        passthrough: false,
    }
}

/// Pairs each utterance with a different member of its label group; singletons stay single.
pub fn pair_secp<R: Rng + ?Sized>(batch: &[&Utterance], rng: &mut R) -> Paired {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in batch.iter().enumerate() {
        groups.entry(u.label.name.as_str()).or_default().push(i);
    }
    let mut items: Vec<Option<BatchItem>> = vec![None; batch.len()];
    for members in groups.values_mut() {
        members.shuffle(rng);
        for (k, &i) in members.iter().enumerate() {
            let x = batch[i];
            if members.len() < 2 {
                items[i] = Some(BatchItem::Single {
                    id: x.id.clone(),
                    label: x.label.clone(),
                });
                continue;
            }
            // uniform over the other members
            let mut j = rng.gen_range(0..members.len() - 1);
            if j >= k {
                j += 1;
            }
            let partner = batch[members[j]];
            items[i] = Some(BatchItem::Concat {
                a: x.id.clone(),
                b: partner.id.clone(),
                scheme: Scheme::SeCp,
                order_swap: rng.gen(),
                crop_seed: rng.gen(),
                label: x.label.clone(),
            });
        }
    }
    let passthrough = items.iter().all(|i| !i.as_ref().unwrap().is_concat());
    Paired {
        items: items.into_iter().map(Option::unwrap).collect(),
        passthrough,
    }
}

/// Shuffles the corpus into batches and applies the scheme to an exact quota of them.
pub fn plan_epoch(corpus: &[Utterance], config: &PlanConfig, seed: u64) -> Result<EpochPlan> {
    if corpus.is_empty() {
        return Err(BatchError::EmptyCorpus);
    }
    if config.batch_size == 0 {
        return Err(BatchError::ZeroBatchSize);
    }
    if !(0.0..=1.0).contains(&config.aug_fraction) {
        return Err(BatchError::InvalidFraction(config.aug_fraction));
    }
    let mut rng = seeding::rng_from(seed);
    let mut order: Vec<&Utterance> = corpus.iter().collect();
    order.shuffle(&mut rng);
    let chunks: Vec<&[&Utterance]> = order.chunks(config.batch_size).collect();
    let n = chunks.len();

    let (ncp, secp, _) = quota(n, config.scheme, config.aug_fraction);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let mut kinds = vec![BatchKind::Clean; n];
    for &b in &slots[..ncp] {
        kinds[b] = BatchKind::NCp;
    }
    for &b in &slots[ncp..ncp + secp] {
        kinds[b] = BatchKind::SeCp;
    }

    let batches = chunks
        .into_iter()
        .zip(kinds)
        .map(|(chunk, kind)| {
            let items = match kind {
                BatchKind::Clean => singles(chunk),
                BatchKind::NCp => pair_ncp(chunk, &mut rng).items,
                BatchKind::SeCp => pair_secp(chunk, &mut rng).items,
            };
            Batch { kind, items }
        })
        .collect();
    Ok(EpochPlan {
        batches,
        seed,
        scheme: config.scheme,
        aug_fraction: config.aug_fraction,
    })
}

fn lookup<'a>(store: &'a FeatureStore, id: &str) -> Result<&'a FeatureMatrix> {
    store
        .get(id)
        .ok_or_else(|| BatchError::MissingFeatures(id.to_string()))
}

/// Turns a batch into model inputs. Concat members are cropped with the item's own seed.
pub fn materialize_batch(
    batch: &Batch,
    store: &FeatureStore,
    crop_seconds: f64,
) -> Result<Vec<(FeatureMatrix, EmotionLabel)>> {
    batch
        .items
        .iter()
        .map(|item| match item {
            BatchItem::Single { id, label } => Ok((lookup(store, id)?.clone(), label.clone())),
            BatchItem::Concat {
                a,
                b,
                order_swap,
                crop_seed,
                label,
                ..
            } => {
                let (fa, fb) = (lookup(store, a)?, lookup(store, b)?);
                let mut rng = seeding::rng_from(*crop_seed);
                let ca = random_crop(fa, crop_seconds, &mut rng);
                let cb = random_crop(fb, crop_seconds, &mut rng);
                Ok((concat_features(&ca, &cb, *order_swap)?, label.clone()))
            }
        })
        .collect()
}

impl EpochPlan {
    pub fn num_augmented(&self) -> usize {
        self.batches
            .iter()
            .filter(|b| b.kind != BatchKind::Clean)
            .count()
    }

    pub fn count_kind(&self, kind: BatchKind) -> usize {
        self.batches.iter().filter(|b| b.kind == kind).count()
    }

    pub fn items(&self) -> impl Iterator<Item = &BatchItem> {
        self.batches.iter().flat_map(|b| b.items.iter())
    }

    /// Header line, then one batch per line: `S:<id>` or `C:<a>:<b>:<scheme>:<swap>:<seed>`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# seed={} scheme={} aug_fraction={}\n",
            self.seed, self.scheme, self.aug_fraction
        );
        for batch in &self.batches {
            let tokens: Vec<String> = batch
                .items
                .iter()
                .map(|item| match item {
                    BatchItem::Single { id, .. } => format!("S:{id}"),
                    BatchItem::Concat {
                        a,
                        b,
                        scheme,
                        order_swap,
                        crop_seed,
                        ..
                    } => format!("C:{a}:{b}:{scheme}:{}:{crop_seed}", *order_swap as u8),
                })
                .collect();
            let _ = writeln!(out, "{}", tokens.join(" "));
        }
        out
    }

    /// Parses [`EpochPlan::to_text`] output; labels are recomputed via `label_of`.
    ///
    /// Batch kinds are inferred from the items, so a pass-through N-CP batch reads back as clean.
    pub fn parse<F>(text: &str, label_of: F) -> Result<EpochPlan>
    where
        F: Fn(&str) -> Option<EmotionLabel>,
    {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(BatchError::Parse {
            line: 1,
            reason: "empty plan".into(),
        })?;
        let perr = |line: usize, reason: String| BatchError::Parse {
            line: line + 1,
            reason,
        };
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| perr(0, "missing header".into()))?;
        let mut seed = None;
        let mut scheme = None;
        let mut aug_fraction = None;
        for kv in header.split_whitespace() {
            match kv.split_once('=') {
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("scheme", v)) => scheme = v.parse::<Scheme>().ok(),
                Some(("aug_fraction", v)) => aug_fraction = v.parse::<f64>().ok(),
                _ => return Err(perr(0, format!("bad header field {kv:?}"))),
            }
        }
        let (seed, scheme, aug_fraction) = match (seed, scheme, aug_fraction) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(perr(0, "incomplete header".into())),
        };

        let label = |line: usize, id: &str| {
            label_of(id).ok_or_else(|| perr(line, format!("unknown utterance {id:?}")))
        };
        let mut batches = Vec::new();
        for (ln, line) in lines {
            let mut items = Vec::new();
            let mut kind = BatchKind::Clean;
            for token in line.split_whitespace() {
                let fields: Vec<&str> = token.split(':').collect();
                match fields.as_slice() {
                    ["S", id] => items.push(BatchItem::Single {
                        id: id.to_string(),
                        label: label(ln, id)?,
                    }),
                    ["C", a, b, sch, swap, crop_seed] => {
                        let sch: Scheme = sch
                            .parse()
                            .map_err(|e: CopyPasteError| perr(ln, e.to_string()))?;
                        kind = match sch {
                            Scheme::NCp => BatchKind::NCp,
                            Scheme::SeCp => BatchKind::SeCp,
                            other => return Err(perr(ln, format!("{other} is not a pair scheme"))),
                        };
                        let order_swap = match *swap {
                            "0" => false,
                            "1" => true,
                            other => return Err(perr(ln, format!("bad swap flag {other:?}"))),
                        };
                        let crop_seed = crop_seed
                            .parse()
                            .map_err(|_| perr(ln, format!("bad seed {crop_seed:?}")))?;
                        let assigned = concat_label(&label(ln, a)?, &label(ln, b)?, sch)?;
                        items.push(BatchItem::Concat {
                            a: a.to_string(),
                            b: b.to_string(),
                            scheme: sch,
                            order_swap,
                            crop_seed,
                            label: assigned,
                        });
                    }
                    _ => return Err(perr(ln, format!("bad item {token:?}"))),
                }
            }
            batches.push(Batch { kind, items });
        }
        Ok(EpochPlan {
            batches,
            seed,
            scheme,
            aug_fraction,
        })
    }
}
