//! Training loop with dev-set model selection.

use super::network::{loss_and_grad, predict};
use super::optim::{Adam, AdamConfig};
use super::{ModelConfig, ModelError, ModelParams, Result, MIN_SHARPNESS};
use crate::batcher::{materialize_batch, plan_epoch, BatchError, PlanConfig};
use crate::copypaste::Scheme;
use crate::corpus::{LabelSet, Utterance};
use crate::eval::{weighted_f1, EvalReport};
use crate::features::{FeatureMatrix, FeatureStore};
use crate::seeding::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub scheme: Scheme,
    pub aug_fraction: f64,
    pub crop_seconds: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub enc_dim: usize,
    pub heads: usize,
    pub fc_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::new(0);
        Self {
            batch_size: 128,
            scheme: Scheme::None,
            aug_fraction: 0.8,
            crop_seconds: 4.0,
            adam: AdamConfig::default(),
            epochs: 20,
            seed: 0,
            hidden_dim: m.hidden_dim,
            enc_dim: m.enc_dim,
            heads: m.heads,
            fc_dim: m.fc_dim,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            enc_dim: self.enc_dim,
            heads: self.heads,
            fc_dim: self.fc_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            (self.batch_size, "batch_size"),
            (self.hidden_dim, "hidden_dim"),
            (self.enc_dim, "enc_dim"),
            (self.heads, "heads"),
            (self.fc_dim, "fc_dim"),
        ];
        if let Some((_, name)) = counts.iter().find(|(v, _)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(ModelError::Config(
                "adam betas must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        if !(self.crop_seconds > 0.0 && self.crop_seconds.is_finite()) {
            return Err(ModelError::Config("crop_seconds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.aug_fraction) {
            return Err(BatchError::InvalidFraction(self.aug_fraction).into());
        }
        Ok(())
    }

    fn plan_config(&self) -> PlanConfig {
        PlanConfig {
            batch_size: self.batch_size,
            scheme: self.scheme,
            aug_fraction: self.aug_fraction,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev weighted F1.
    pub params: ModelParams,
    /// Dev weighted F1 after each epoch.
    pub history: Vec<f64>,
    /// Mean training loss of each epoch.
    pub train_loss: Vec<f64>,
    pub best_epoch: Option<usize>,
}

fn features_of<'a>(store: &'a FeatureStore, id: &str) -> Result<&'a FeatureMatrix> {
    store
        .get(id)
        .ok_or_else(|| BatchError::MissingFeatures(id.to_string()).into())
}

fn class_index(labels: &LabelSet, name: &str) -> Result<usize> {
    labels
        .index_of(name)
        .ok_or_else(|| ModelError::Config(format!("label {name:?} is not in the label set")))
}

/// Predicted class index for each utterance.
pub fn predict_utterances(
    utts: &[Utterance],
    store: &FeatureStore,
    params: &ModelParams,
) -> Result<Vec<usize>> {
    utts.iter()
        .map(|u| predict(features_of(store, &u.id)?, params))
        .collect()
}

/// Scores `params` on `utts` by label name.
pub fn evaluate(
    utts: &[Utterance],
    store: &FeatureStore,
    params: &ModelParams,
    labels: &LabelSet,
) -> Result<EvalReport<String>> {
    let hyps = predict_utterances(utts, store, params)?;
    let names: Vec<String> = hyps
        .iter()
        .map(|h| labels.labels()[*h].name.clone())
        .collect();
    let refs: Vec<String> = utts.iter().map(|u| u.label.name.clone()).collect();
    Ok(weighted_f1(&refs, &names)?)
}

fn dev_f1(
    dev: &[Utterance],
    dev_refs: &[usize],
    store: &FeatureStore,
    params: &ModelParams,
) -> Result<f64> {
    let hyps = predict_utterances(dev, store, params)?;
    Ok(weighted_f1(dev_refs, &hyps)?.weighted_f1)
}

/// Trains for `config.epochs` epochs and keeps the parameters with the best dev weighted F1.
/// Ties go to the earliest epoch. With zero epochs the initial parameters are returned.
pub fn train(
    train: &[Utterance],
    dev: &[Utterance],
    store: &FeatureStore,
    labels: &LabelSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(ModelError::Config(
            "train and dev splits must be non-empty".into(),
        ));
    }
    let input_dim = features_of(store, &train[0].id)?.dim();
    let model = config.model_config(input_dim, labels.len());
    let mut params = ModelParams::init(&model, &mut rng_from(derive_seed(config.seed, &[b"init"])));
    let dev_refs = dev
        .iter()
        .map(|u| class_index(labels, &u.label.name))
        .collect::<Result<Vec<_>>>()?;
    for u in train {
        class_index(labels, &u.label.name)?;
    }

    let mut adam = Adam::new(config.adam, &params);
    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut train_loss = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let plan_seed = derive_seed(config.seed, &[b"epoch", &(epoch as u64).to_le_bytes()]);
        let plan = plan_epoch(train, &config.plan_config(), plan_seed)?;
        let mut loss_sum = 0.0;
        for (b, batch) in plan.batches.iter().enumerate() {
            let items = materialize_batch(batch, store, config.crop_seconds)?
                .into_iter()
                .map(|(f, l)| Ok((f, class_index(labels, &l.name)?)))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = loss_and_grad(&items, &params)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    loss,
                    epoch,
                    batch: b,
                });
            }
            loss_sum += loss;
            adam.update(&mut params, &grads);
            params.attention.s.mapv_inplace(|s| s.max(MIN_SHARPNESS));
        }
        let mean_loss = loss_sum / plan.batches.len() as f64;
        let f1 = dev_f1(dev, &dev_refs, store, &params)?;
        log::info!("epoch {epoch}: train loss {mean_loss:.4}, dev weighted F1 {f1:.4}");
        train_loss.push(mean_loss);
        history.push(f1);
        if f1 > best_f1 {
            best_f1 = f1;
            best_epoch = Some(epoch);
            best = params.clone();
        }
    }
    Ok(TrainOutcome {
        params: best,
        history,
        train_loss,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Waveform;
    use crate::corpus::{AudioRef, Split};
    use ndarray::Array2;
    use rand::Rng;
    use std::sync::Arc;

    /// Four classes whose frames sit around distinct, well separated centers.
    fn toy(n_per_class: usize, seed: u64) -> (Vec<Utterance>, FeatureStore, LabelSet) {
        let labels =
            LabelSet::from_names(&["neutral", "angry", "happy", "sad"], "neutral").unwrap();
        let mut rng = rng_from(seed);
        let mut utts = Vec::new();
        let mut store = FeatureStore::new();
        let dummy = Arc::new(Waveform::new(vec![0.0; 16], 16_000).unwrap());
        for (c, label) in labels.labels().iter().enumerate() {
            for i in 0..n_per_class {
                let id = format!("{}_{i}", label.name);
                let t = rng.gen_range(20..60);
                let vals = Array2::from_shape_fn((t, 6), |(_, d)| {
                    let center = if d == c { 3.0 } else { 0.0 };
                    center + rng.gen_range(-0.5..0.5)
                });
                store.insert(id.clone(), FeatureMatrix::from_values(vals).unwrap());
                utts.push(Utterance {
                    id,
                    speaker_id: format!("s{i}"),
                    label: label.clone(),
                    split: Split::Train,
                    audio: AudioRef::Inline(dummy.clone()),
                    session: None,
                });
            }
        }
        (utts, store, labels)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 50,
            seed: 3,
            hidden_dim: 8,
            enc_dim: 4,
            heads: 2,
            fc_dim: 8,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            crop_seconds: 0.2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (utts, store, labels) = toy(3, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let out = train(&utts, &utts, &store, &labels, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
        let model = cfg.model_config(6, 4);
        let init = ModelParams::init(&model, &mut rng_from(derive_seed(cfg.seed, &[b"init"])));
        assert_eq!(out.params, init);
    }

    #[test]
    fn separable_toy_set_reaches_perfect_dev_f1() {
        let (tr, store, labels) = toy(8, 2);
        let (dev, dev_store, _) = toy(4, 9);
        let mut all = store;
        for (k, v) in dev_store {
            all.insert(format!("dev_{k}"), v);
        }
        let dev: Vec<Utterance> = dev
            .into_iter()
            .map(|mut u| {
                u.id = format!("dev_{}", u.id);
                u
            })
            .collect();
        for scheme in [Scheme::None, Scheme::NCp] {
            let cfg = TrainConfig {
                scheme,
                ..small_config()
            };
            let out = train(&tr, &dev, &all, &labels, &cfg).unwrap();
            assert_eq!(out.history.len(), 50);
            assert!(out.history.contains(&1.0), "{:?}", out.history);
            let best = out.best_epoch.unwrap();
            assert_eq!(out.history[best], 1.0);
            assert!(out.history[..best].iter().all(|f| *f < 1.0));
            let report = evaluate(&dev, &all, &out.params, &labels).unwrap();
            assert_eq!(report.weighted_f1, 1.0);
        }
    }

    #[test]
    fn same_seed_same_history() {
        let (utts, store, labels) = toy(4, 5);
        let cfg = TrainConfig {
            epochs: 4,
            scheme: Scheme::NPlusSeCp,
            ..small_config()
        };
        let a = train(&utts, &utts, &store, &labels, &cfg).unwrap();
        let b = train(&utts, &utts, &store, &labels, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn small_steps_on_a_fixed_batch_do_not_increase_loss() {
        let (utts, store, labels) = toy(2, 6);
        let batch: Vec<(FeatureMatrix, usize)> = utts
            .iter()
            .map(|u| {
                (
                    store[&u.id].clone(),
                    labels.index_of(&u.label.name).unwrap(),
                )
            })
            .collect();
        let model = small_config().model_config(6, 4);
        let mut params = ModelParams::init(&model, &mut rng_from(1));
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 1e-4,
                ..AdamConfig::default()
            },
            &params,
        );
        let mut prev = f64::INFINITY;
        for _ in 0..20 {
            let (loss, grads) = loss_and_grad(&batch, &params).unwrap();
            assert!(loss <= prev + 1e-12, "{loss} > {prev}");
            prev = loss;
            adam.update(&mut params, &grads);
        }
    }

    #[test]
    fn missing_features_and_bad_config_are_errors() {
        let (utts, mut store, labels) = toy(2, 7);
        assert!(train(&utts, &[], &store, &labels, &small_config()).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..small_config()
        };
        assert!(train(&utts, &utts, &store, &labels, &bad).is_err());
        store.remove(&utts[3].id);
        assert!(matches!(
            train(&utts, &utts, &store, &labels, &small_config()),
            Err(ModelError::Batch(BatchError::MissingFeatures(_)))
        ));
    }
}
