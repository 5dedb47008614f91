//! End-to-end helpers: feature extraction for a corpus and single train/test trials.

use thiserror::Error;

use crate::audio::AudioError;
use crate::corpus::{LabelSet, Utterance};
use crate::features::{FeatureError, FeatureStore, FrontEnd};
use crate::model::train::{evaluate, train, TrainConfig};
use crate::model::{ModelError, ModelParams};

#[derive(Error, Debug)]
pub enum ExperimentError {
    #[error("utterance {id}: {source}")]
    Audio { id: String, source: AudioError },
    #[error("utterance {id}: {source}")]
    Features { id: String, source: FeatureError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Runs the front-end over every utterance and adds the results to `store`.
pub fn extract_into(
    utts: &[Utterance],
    front_end: &FrontEnd,
    store: &mut FeatureStore,
) -> Result<()> {
    for u in utts {
        let wave = u.load_audio().map_err(|source| ExperimentError::Audio {
            id: u.id.clone(),
            source,
        })?;
        let feats = front_end
            .process(&wave)
            .map_err(|source| ExperimentError::Features {
                id: u.id.clone(),
                source,
            })?;
        store.insert(u.id.clone(), feats);
    }
    Ok(())
}

pub fn extract_features(utts: &[Utterance], front_end: &FrontEnd) -> Result<FeatureStore> {
    let mut store = FeatureStore::with_capacity(utts.len());
    extract_into(utts, front_end, &mut store)?;
    Ok(store)
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub params: ModelParams,
    pub dev_history: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Weighted F1 of the dev-selected model on each test set, in the order given.
    pub test_f1: Vec<f64>,
}

/// Trains with dev-set selection and scores the selected model on each test set.
pub fn run_trial(
    train_set: &[Utterance],
    dev: &[Utterance],
    tests: &[&[Utterance]],
    store: &FeatureStore,
    labels: &LabelSet,
    config: &TrainConfig,
) -> Result<Trial> {
    let outcome = train(train_set, dev, store, labels, config)?;
    let test_f1 = tests
        .iter()
        .map(|t| Ok(evaluate(t, store, &outcome.params, labels)?.weighted_f1))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trial {
        params: outcome.params,
        dev_history: outcome.history,
        best_epoch: outcome.best_epoch,
        test_f1,
    })
}
