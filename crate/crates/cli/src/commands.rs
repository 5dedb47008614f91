use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::{anyhow, Context};
use copypaste_core::audio::read_wav;
use copypaste_core::copypaste::Scheme;
use copypaste_core::corpus::{
    by_split, manifest_label_names, read_manifest, AudioRef, LabelSet, Split, Utterance,
};
use copypaste_core::eval::{average_runs, kfold_plan, weighted_f1};
use copypaste_core::features::{read_feature_cache, write_feature_cache, FeatureStore, FrontEnd};
use copypaste_core::model::checkpoint::Checkpoint;
use copypaste_core::model::optim::AdamConfig;
use copypaste_core::model::shapes::{shapes_to_text, validate_table1_shapes};
use copypaste_core::model::train::{predict_utterances, train as train_model, TrainConfig};
use copypaste_core::noiseaug::{
    build_augmented_trainset, make_noisy_testset, write_noisy_set, NoiseCorpus, DEFAULT_TRAIN_SNRS,
};
use copypaste_core::synthcorpus::{generate_corpus, generate_noise_proxy, SynthConfig};

use crate::settings::Settings;
use crate::{
    CliError, EvalArgs, FeaturesArgs, NoisifyArgs, ShapesArgs, SynthArgs, TrainArgs, TrainOpts,
};

type Result<T> = std::result::Result<T, CliError>;

pub const CACHE_ENV: &str = "COPYPASTE_CACHE";

const SYNTH_KEYS: &[&str] = &[
    "out",
    "seed",
    "n_classes",
    "n_speakers",
    "utts_per_speaker",
    "min_duration",
    "max_duration",
];

const COMMON_KEYS: [&str; 3] = ["manifest", "cache", "neutral"];

const TRAIN_CONFIG_KEYS: [&str; 15] = [
    "scheme",
    "epochs",
    "seed",
    "runs",
    "batch_size",
    "aug_fraction",
    "crop_seconds",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "hidden_dim",
    "enc_dim",
    "heads",
    "fc_dim",
];

const FEATURES_KEYS: &[&str] = &COMMON_KEYS;

const TRAIN_KEYS: &[&str] =
    &concat_keys::<20>(&[&COMMON_KEYS, &TRAIN_CONFIG_KEYS, &["train_manifest", "out"]]);

const EVAL_KEYS: &[&str] = &concat_keys::<24>(&[
    &COMMON_KEYS,
    &TRAIN_CONFIG_KEYS,
    &[
        "checkpoint",
        "model_dir",
        "split",
        "folds",
        "out",
        "train_manifest",
    ],
]);

const NOISIFY_KEYS: &[&str] = &["manifest", "noise", "mode", "snr", "seed", "out", "neutral"];

const SHAPES_KEYS: &[&str] = &["frames", "classes"];

const fn concat_keys<const N: usize>(parts: &[&[&'static str]]) -> [&'static str; N] {
    let mut out = [""; N];
    let mut n = 0;
    let mut p = 0;
    while p < parts.len() {
        let mut i = 0;
        while i < parts[p].len() {
            out[n] = parts[p][i];
            n += 1;
            i += 1;
        }
        p += 1;
    }
    assert!(n == N, "key count");
    out
}

fn path_flag(s: &mut Settings, key: &str, v: &Option<PathBuf>) -> Result<()> {
    s.flag(key, &v.as_ref().map(|p| p.display().to_string()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut s = Settings::load(SYNTH_KEYS, a.config.as_deref())?;
    path_flag(&mut s, "out", &a.out)?;
    s.flag("seed", &a.seed)?;
    s.flag("n_speakers", &a.n_speakers)?;
    s.flag("utts_per_speaker", &a.utts_per_speaker)?;
    s.flag("min_duration", &a.min_duration)?;
    s.flag("max_duration", &a.max_duration)?;

    let out: PathBuf = s.require("out")?;
    let d = SynthConfig::default();
    let config = SynthConfig {
        seed: s.get_or("seed", d.seed)?,
        n_classes: s.get_or("n_classes", d.n_classes)?,
        n_speakers: s.get_or("n_speakers", d.n_speakers)?,
        utts_per_speaker_per_class: s.get_or("utts_per_speaker", d.utts_per_speaker_per_class)?,
        min_duration_s: s.get_or("min_duration", d.min_duration_s)?,
        max_duration_s: s.get_or("max_duration", d.max_duration_s)?,
        ..d
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let utts = generate_corpus(&config, &out).context("generating corpus")?;
    let noise =
        generate_noise_proxy(&config, out.join("noise")).context("generating noise files")?;
    log::info!(
        "wrote {} utterances to {} and noise manifest {}",
        utts.len(),
        out.join("manifest.tsv").display(),
        noise.display()
    );
    Ok(())
}

fn label_set(manifest: &Path, neutral: &str) -> Result<LabelSet> {
    let mut names = manifest_label_names(manifest)
        .with_context(|| format!("reading {}", manifest.display()))?;
    names.sort();
    if !names.iter().any(|n| n == neutral) {
        names.push(neutral.to_string());
        names.sort();
    }
    LabelSet::from_names(&names, neutral).map_err(|e| CliError::Usage(e.to_string()))
}

fn load_manifest(manifest: &Path, labels: &LabelSet) -> Result<Vec<Utterance>> {
    Ok(read_manifest(manifest, labels)
        .with_context(|| format!("reading {}", manifest.display()))?)
}

fn cache_root(flag: Option<PathBuf>, manifest: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("cache"))
}

fn mtime(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

#[derive(Debug, Default)]
struct CacheStats {
    hits: usize,
    computed: usize,
}

/// Loads cached features, recomputing any that are missing or older than their audio.
fn cached_features(
    utts: &[Utterance],
    root: &Path,
    store: &mut FeatureStore,
) -> anyhow::Result<CacheStats> {
    fs::create_dir_all(root).with_context(|| format!("creating cache {}", root.display()))?;
    let front_end = FrontEnd::default();
    let mut stats = CacheStats::default();
    for u in utts {
        if store.contains_key(&u.id) {
            continue;
        }
        let cache_file = root.join(format!("{}.feat", u.id));
        let AudioRef::Path(audio) = &u.audio else {
            return Err(anyhow!("utterance {} has no audio file", u.id));
        };
        let fresh = match (mtime(&cache_file), mtime(audio)) {
            (Some(c), Some(a)) => c >= a,
            _ => false,
        };
        if fresh {
            if let Ok(f) = read_feature_cache(&cache_file) {
                store.insert(u.id.clone(), f);
                stats.hits += 1;
                continue;
            }
        }
        let wave = read_wav(audio).with_context(|| format!("reading {}", audio.display()))?;
        let feats = front_end
            .process(&wave)
            .with_context(|| format!("extracting features from {}", audio.display()))?;
        write_feature_cache(&feats, &cache_file)
            .with_context(|| format!("writing {}", cache_file.display()))?;
        // reload so cached and fresh runs see identical values
        store.insert(u.id.clone(), read_feature_cache(&cache_file)?);
        stats.computed += 1;
    }
    Ok(stats)
}

pub fn features(a: &FeaturesArgs) -> Result<()> {
    let mut s = Settings::load(FEATURES_KEYS, a.config.as_deref())?;
    path_flag(&mut s, "manifest", &a.manifest)?;
    path_flag(&mut s, "cache", &a.cache)?;
    s.flag("neutral", &a.neutral)?;
    let manifest: PathBuf = s.require("manifest")?;
    let labels = label_set(&manifest, &s.get_or("neutral", "neutral".to_string())?)?;
    let utts = load_manifest(&manifest, &labels)?;
    let root = cache_root(s.get("cache")?, &manifest);
    let stats = cached_features(&utts, &root, &mut FeatureStore::new())?;
    log::info!(
        "{} utterances: {} computed, {} from cache {}",
        utts.len(),
        stats.computed,
        stats.hits,
        root.display()
    );
    Ok(())
}

fn apply_train_opts(s: &mut Settings, o: &TrainOpts) -> Result<()> {
    s.flag("scheme", &o.scheme)?;
    s.flag("epochs", &o.epochs)?;
    s.flag("seed", &o.seed)?;
    s.flag("runs", &o.runs)?;
    s.flag("batch_size", &o.batch_size)?;
    s.flag("aug_fraction", &o.aug_fraction)?;
    s.flag("crop_seconds", &o.crop_seconds)?;
    s.flag("learning_rate", &o.learning_rate)?;
    Ok(())
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let scheme: Scheme = s.get_or("scheme", d.scheme)?;
    let cfg = TrainConfig {
        batch_size: s.get_or("batch_size", d.batch_size)?,
        scheme,
        aug_fraction: s.get_or("aug_fraction", d.aug_fraction)?,
        crop_seconds: s.get_or("crop_seconds", d.crop_seconds)?,
        adam: AdamConfig {
            learning_rate: s.get_or("learning_rate", d.adam.learning_rate)?,
            beta1: s.get_or("beta1", d.adam.beta1)?,
            beta2: s.get_or("beta2", d.adam.beta2)?,
            epsilon: s.get_or("epsilon", d.adam.epsilon)?,
        },
        epochs: s.get_or("epochs", d.epochs)?,
        seed: s.get_or("seed", d.seed)?,
        hidden_dim: s.get_or("hidden_dim", d.hidden_dim)?,
        enc_dim: s.get_or("enc_dim", d.enc_dim)?,
        heads: s.get_or("heads", d.heads)?,
        fc_dim: s.get_or("fc_dim", d.fc_dim)?,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn runs(s: &Settings) -> Result<usize> {
    let runs: usize = s.get_or("runs", 1)?;
    if runs == 0 {
        return Err(CliError::Usage("runs must be positive".into()));
    }
    Ok(runs)
}

/// Labels of the corpus manifest, plus any extra labels of a replacement train manifest.
fn combined_labels(
    manifest: &Path,
    train_manifest: Option<&Path>,
    neutral: &str,
) -> Result<LabelSet> {
    let mut names: BTreeSet<String> = label_set(manifest, neutral)?
        .labels()
        .iter()
        .map(|l| l.name.clone())
        .collect();
    if let Some(t) = train_manifest {
        names.extend(
            label_set(t, neutral)?
                .labels()
                .iter()
                .map(|l| l.name.clone()),
        );
    }
    let names: Vec<String> = names.into_iter().collect();
    LabelSet::from_names(&names, neutral).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut s = Settings::load(TRAIN_KEYS, a.config.as_deref())?;
    path_flag(&mut s, "manifest", &a.manifest)?;
    path_flag(&mut s, "train_manifest", &a.train_manifest)?;
    path_flag(&mut s, "out", &a.out)?;
    path_flag(&mut s, "cache", &a.cache)?;
    s.flag("neutral", &a.neutral)?;
    apply_train_opts(&mut s, &a.opts)?;

    let manifest: PathBuf = s.require("manifest")?;
    let out: PathBuf = s.require("out")?;
    let train_manifest: Option<PathBuf> = s.get("train_manifest")?;
    let config = train_config(&s)?;
    let runs = runs(&s)?;
    let neutral: String = s.get_or("neutral", "neutral".to_string())?;
    let labels = combined_labels(&manifest, train_manifest.as_deref(), &neutral)?;

    let corpus = load_manifest(&manifest, &labels)?;
    let train_set = match &train_manifest {
        Some(t) => by_split(&load_manifest(t, &labels)?, Split::Train),
        None => by_split(&corpus, Split::Train),
    };
    let dev = by_split(&corpus, Split::Dev);
    if train_set.is_empty() || dev.is_empty() {
        return Err(anyhow!("need non-empty train and dev splits").into());
    }
    let mut store = FeatureStore::new();
    let root = cache_root(s.get("cache")?, &manifest);
    cached_features(&train_set, &root, &mut store)?;
    cached_features(&dev, &root, &mut store)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for run in 0..runs {
        let cfg = TrainConfig {
            seed: config.seed + run as u64,
            ..config.clone()
        };
        log::info!(
            "run {run}: scheme {}, seed {}, {} epochs",
            cfg.scheme,
            cfg.seed,
            cfg.epochs
        );
        let outcome = train_model(&train_set, &dev, &store, &labels, &cfg).context("training")?;
        let ckpt = out.join(format!("run{run}.ckpt"));
        Checkpoint {
            labels: labels.clone(),
            params: outcome.params,
        }
        .save(&ckpt)
        .context("saving checkpoint")?;
        let mut history = String::new();
        for (epoch, (f1, loss)) in outcome.history.iter().zip(&outcome.train_loss).enumerate() {
            writeln!(history, "{epoch}\t{f1:.6}\t{loss:.6}").expect("string write");
        }
        let hist_path = out.join(format!("history_run{run}.tsv"));
        fs::write(&hist_path, history)
            .with_context(|| format!("writing {}", hist_path.display()))?;
        log::info!(
            "run {run}: best epoch {:?}, wrote {}",
            outcome.best_epoch,
            ckpt.display()
        );
    }
    Ok(())
}

fn score(
    ckpt: &Checkpoint,
    utts: &[Utterance],
    store: &FeatureStore,
) -> anyhow::Result<copypaste_core::eval::EvalReport<String>> {
    let hyps = predict_utterances(utts, store, &ckpt.params)?;
    let hyps: Vec<String> = hyps
        .iter()
        .map(|h| ckpt.labels.labels()[*h].name.clone())
        .collect();
    let refs: Vec<String> = utts.iter().map(|u| u.label.name.clone()).collect();
    Ok(weighted_f1(&refs, &hyps)?)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut s = Settings::load(EVAL_KEYS, a.config.as_deref())?;
    path_flag(&mut s, "manifest", &a.manifest)?;
    path_flag(&mut s, "checkpoint", &a.checkpoint)?;
    path_flag(&mut s, "model_dir", &a.model_dir)?;
    s.flag("split", &a.split)?;
    s.flag("folds", &a.folds)?;
    path_flag(&mut s, "out", &a.out)?;
    path_flag(&mut s, "cache", &a.cache)?;
    s.flag("neutral", &a.neutral)?;
    apply_train_opts(&mut s, &a.opts)?;

    let manifest: PathBuf = s.require("manifest")?;
    let neutral: String = s.get_or("neutral", "neutral".to_string())?;
    let root = cache_root(s.get("cache")?, &manifest);
    let mut text = String::new();
    let mut kv = String::new();

    if let Some(folds) = s.get::<usize>("folds")? {
        if folds != copypaste_core::eval::NUM_FOLDS {
            return Err(CliError::Usage(format!(
                "only {}-fold cross-validation is supported",
                copypaste_core::eval::NUM_FOLDS
            )));
        }
        let config = train_config(&s)?;
        let runs = runs(&s)?;
        let labels = label_set(&manifest, &neutral)?;
        let corpus = load_manifest(&manifest, &labels)?;
        let mut sessions: Vec<String> = corpus
            .iter()
            .map(|u| u.session.clone())
            .collect::<Option<BTreeSet<_>>>()
            .ok_or_else(|| {
                anyhow!("every manifest row needs a session column for cross-validation")
            })?
            .into_iter()
            .collect();
        sessions.sort();
        let plan = kfold_plan(&sessions).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut store = FeatureStore::new();
        cached_features(&corpus, &root, &mut store)?;
        let in_sessions = |set: &[String]| -> Vec<Utterance> {
            corpus
                .iter()
                .filter(|u| u.session.as_ref().is_some_and(|s| set.contains(s)))
                .cloned()
                .collect()
        };
        let mut fold_means = Vec::new();
        for (i, fold) in plan.folds.iter().enumerate() {
            let tr = in_sessions(&fold.train);
            let dv = in_sessions(std::slice::from_ref(&fold.dev));
            let te = in_sessions(std::slice::from_ref(&fold.test));
            let mut scores = Vec::new();
            for run in 0..runs {
                let cfg = TrainConfig {
                    seed: config.seed + run as u64,
                    ..config.clone()
                };
                let outcome =
                    train_model(&tr, &dv, &store, &labels, &cfg).context("training fold")?;
                let ck = Checkpoint {
                    labels: labels.clone(),
                    params: outcome.params,
                };
                let report = score(&ck, &te, &store)?;
                writeln!(
                    text,
                    "== fold {i} run {run} (test {}, dev {})",
                    fold.test, fold.dev
                )
                .unwrap();
                text.push_str(&report.to_text());
                scores.push(report.weighted_f1);
            }
            let (mean, _) = average_runs(&scores).map_err(anyhow::Error::from)?;
            writeln!(text, "fold {i} mean weighted F1 {mean:.4}").unwrap();
            writeln!(kv, "fold{i}.weighted_f1\t{mean}").unwrap();
            fold_means.push(mean);
        }
        let (mean, std) = average_runs(&fold_means).map_err(anyhow::Error::from)?;
        writeln!(text, "mean weighted F1 {mean:.4} (std {std:.4})").unwrap();
        writeln!(kv, "mean.weighted_f1\t{mean}\nstd.weighted_f1\t{std}").unwrap();
    } else {
        let checkpoints: Vec<PathBuf> = match (
            s.get::<PathBuf>("checkpoint")?,
            s.get::<PathBuf>("model_dir")?,
        ) {
            (Some(c), None) => vec![c],
            (None, Some(dir)) => (0..runs(&s)?)
                .map(|i| dir.join(format!("run{i}.ckpt")))
                .collect(),
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of --checkpoint or --model-dir".into(),
                ))
            }
        };
        let split: Split = s.get_or("split", Split::Test)?;
        let labels = label_set(&manifest, &neutral)?;
        let utts = by_split(&load_manifest(&manifest, &labels)?, split);
        if utts.is_empty() {
            return Err(anyhow!("no {split} utterances in {}", manifest.display()).into());
        }
        let mut store = FeatureStore::new();
        cached_features(&utts, &root, &mut store)?;
        let mut scores = Vec::new();
        for (i, path) in checkpoints.iter().enumerate() {
            let ck = Checkpoint::load(path).context("loading checkpoint")?;
            let report = score(&ck, &utts, &store)?;
            writeln!(
                text,
                "== {} on {split} ({} items)",
                path.display(),
                report.n_items
            )
            .unwrap();
            text.push_str(&report.to_text());
            for line in report.to_kv().lines() {
                writeln!(kv, "run{i}.{line}").unwrap();
            }
            scores.push(report.weighted_f1);
        }
        let (mean, std) = average_runs(&scores).map_err(anyhow::Error::from)?;
        writeln!(
            text,
            "mean weighted F1 over {} run(s): {mean:.4} (std {std:.4})",
            scores.len()
        )
        .unwrap();
        writeln!(kv, "mean.weighted_f1\t{mean}\nstd.weighted_f1\t{std}").unwrap();
    }
    print!("{text}");
    if let Some(out) = s.get::<PathBuf>("out")? {
        fs::write(&out, kv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn noisify(a: &NoisifyArgs) -> Result<()> {
    let mut s = Settings::load(NOISIFY_KEYS, a.config.as_deref())?;
    path_flag(&mut s, "manifest", &a.manifest)?;
    path_flag(&mut s, "noise", &a.noise)?;
    s.flag("mode", &a.mode)?;
    s.flag("snr", &a.snr)?;
    s.flag("seed", &a.seed)?;
    path_flag(&mut s, "out", &a.out)?;
    s.flag("neutral", &a.neutral)?;

    let manifest: PathBuf = s.require("manifest")?;
    let noise: PathBuf = s.require("noise")?;
    let out: PathBuf = s.require("out")?;
    let mode: String = s.require("mode")?;
    let seed: u64 = s.get_or("seed", 0)?;
    let snr: Option<f64> = s.get("snr")?;
    if let Some(v) = snr {
        if !v.is_finite() {
            return Err(CliError::Usage(format!("snr must be finite, got {v}")));
        }
    }
    let labels = label_set(&manifest, &s.get_or("neutral", "neutral".to_string())?)?;
    let corpus = load_manifest(&manifest, &labels)?;
    let set = match mode.as_str() {
        "train" => {
            let snrs = snr
                .map(|v| vec![v])
                .unwrap_or_else(|| DEFAULT_TRAIN_SNRS.to_vec());
            let noise = NoiseCorpus::load(&noise).context("loading noise corpus")?;
            build_augmented_trainset(&by_split(&corpus, Split::Train), &noise, &snrs, seed)
                .context("mixing training copies")?
        }
        "test" => {
            let snr = snr.ok_or_else(|| CliError::Usage("test mode needs --snr".into()))?;
            let noise = NoiseCorpus::load(&noise).context("loading noise corpus")?;
            make_noisy_testset(&by_split(&corpus, Split::Test), &noise, snr, seed)
                .context("mixing test copies")?
        }
        other => {
            return Err(CliError::Usage(format!(
                "mode must be train or test, got {other:?}"
            )))
        }
    };
    write_noisy_set(&set, &out, "manifest.tsv").context("writing noisy set")?;
    log::info!(
        "wrote {} utterances ({} mixed) to {}",
        set.utterances.len(),
        set.mixes.len(),
        out.join("manifest.tsv").display()
    );
    Ok(())
}

pub fn shapes(a: &ShapesArgs) -> Result<()> {
    let mut s = Settings::load(SHAPES_KEYS, a.config.as_deref())?;
    s.flag("frames", &a.frames)?;
    s.flag("classes", &a.classes)?;
    let frames: i64 = s.require("frames")?;
    let classes: usize = s.get_or("classes", 4)?;
    if frames <= 0 {
        return Err(anyhow!("frames must be positive, got {frames}").into());
    }
    let stages = validate_table1_shapes(frames as usize, classes).map_err(anyhow::Error::from)?;
    print!("{}", shapes_to_text(&stages));
    Ok(())
}
