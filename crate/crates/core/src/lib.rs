//! CopyPaste data augmentation for speech emotion recognition, with the MFCC front-end,
//! batch scheduler, noise mixing, attention-pooling classifier and scoring it relies on.

pub mod audio;
pub mod batcher;
pub mod copypaste;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod model;
pub mod noiseaug;
pub mod seeding;
pub mod synthcorpus;

pub use copypaste::Scheme;
pub use corpus::{EmotionLabel, LabelSet, Split, Utterance};
pub use features::{FeatureMatrix, FeatureStore};
pub use model::{ModelConfig, ModelParams};
