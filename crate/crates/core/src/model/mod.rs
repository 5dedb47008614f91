//! Attention-pooling emotion classifier.
//!
//! Frames pass through a per-frame encoder, multi-head attention pooling turns the
//! variable-length sequence into `heads` weighted averages, and two affine layers
//! produce class logits. The encoder is a small two-layer network; the convolutional
//! frame network the architecture was designed around is described by [`shapes`].

pub mod attention;
pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod shapes;
pub mod train;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

pub use attention::{attention_pool, attention_weights, AttentionParams};
pub use network::{forward, loss_and_grad, predict};
pub use shapes::validate_table1_shapes;
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
    },
    #[error("frame count must be positive")]
    NonPositiveFrames,
    #[error("{0}")]
    Config(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Batch(#[from] crate::batcher::BatchError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Layer widths. `input_dim` must match the feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub enc_dim: usize,
    pub heads: usize,
    pub fc_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            input_dim: 23,
            hidden_dim: 64,
            enc_dim: 32,
            heads: 32,
            fc_dim: 64,
            num_classes,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.heads * self.enc_dim
    }
}

/// Lower bound kept on every attention sharpness after an update.
pub const MIN_SHARPNESS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array1<f64>,
    pub enc_w2: Array2<f64>,
    pub enc_b2: Array1<f64>,
    pub attention: AttentionParams,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

/// Parameter tensor names, in declaration (and checkpoint) order.
pub const TENSOR_NAMES: [&str; 10] = [
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "attention.mu",
    "attention.s",
    "head.w",
    "head.b",
    "out.w",
    "out.b",
];

fn fan_in_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    let dist = Uniform::new(-bound, bound);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl ModelParams {
    /// Fan-in uniform affine weights, zero biases, head centers from N(0, 0.1^2), sharpness 1.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid sigma");
        Self {
            enc_w1: fan_in_uniform(config.input_dim, config.hidden_dim, rng),
            enc_b1: Array1::zeros(config.hidden_dim),
            enc_w2: fan_in_uniform(config.hidden_dim, config.enc_dim, rng),
            enc_b2: Array1::zeros(config.enc_dim),
            attention: AttentionParams {
                mu: Array2::from_shape_simple_fn((config.heads, config.enc_dim), || {
                    normal.sample(rng)
                }),
                s: Array1::ones(config.heads),
            },
            head_w: fan_in_uniform(config.embedding_dim(), config.fc_dim, rng),
            head_b: Array1::zeros(config.fc_dim),
            out_w: fan_in_uniform(config.fc_dim, config.num_classes, rng),
            out_b: Array1::zeros(config.num_classes),
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            enc_w1: Array2::zeros((config.input_dim, config.hidden_dim)),
            enc_b1: Array1::zeros(config.hidden_dim),
            enc_w2: Array2::zeros((config.hidden_dim, config.enc_dim)),
            enc_b2: Array1::zeros(config.enc_dim),
            attention: AttentionParams {
                mu: Array2::zeros((config.heads, config.enc_dim)),
                s: Array1::zeros(config.heads),
            },
            head_w: Array2::zeros((config.embedding_dim(), config.fc_dim)),
            head_b: Array1::zeros(config.fc_dim),
            out_w: Array2::zeros((config.fc_dim, config.num_classes)),
            out_b: Array1::zeros(config.num_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config())
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.enc_w1.nrows(),
            hidden_dim: self.enc_w1.ncols(),
            enc_dim: self.enc_w2.ncols(),
            heads: self.attention.mu.nrows(),
            fc_dim: self.head_w.ncols(),
            num_classes: self.out_w.ncols(),
        }
    }

    /// Checks that layer shapes chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let c = self.config();
        let checks = [
            (self.enc_b1.len() == c.hidden_dim, "encoder.b1"),
            (self.enc_w2.nrows() == c.hidden_dim, "encoder.w2 rows"),
            (self.enc_b2.len() == c.enc_dim, "encoder.b2"),
            (self.attention.mu.ncols() == c.enc_dim, "attention.mu cols"),
            (self.attention.s.len() == c.heads, "attention.s"),
            (self.head_w.nrows() == c.embedding_dim(), "head.w rows"),
            (self.head_b.len() == c.fc_dim, "head.b"),
            (self.out_w.nrows() == c.fc_dim, "out.w rows"),
            (self.out_b.len() == c.num_classes, "out.b"),
        ];
        if let Some((_, what)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(ModelError::Shape(format!("{what} does not chain")));
        }
        if self
            .tensors()
            .iter()
            .any(|(_, t)| t.iter().any(|v| !v.is_finite()))
        {
            return Err(ModelError::Shape("non-finite parameter".into()));
        }
        if self.attention.s.iter().any(|s| *s <= 0.0) {
            return Err(ModelError::Shape(
                "attention sharpness must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 10] {
        fn sl(a: Option<&[f64]>) -> &[f64] {
            a.expect("standard layout")
        }
        [
            (TENSOR_NAMES[0], sl(self.enc_w1.as_slice())),
            (TENSOR_NAMES[1], sl(self.enc_b1.as_slice())),
            (TENSOR_NAMES[2], sl(self.enc_w2.as_slice())),
            (TENSOR_NAMES[3], sl(self.enc_b2.as_slice())),
            (TENSOR_NAMES[4], sl(self.attention.mu.as_slice())),
            (TENSOR_NAMES[5], sl(self.attention.s.as_slice())),
            (TENSOR_NAMES[6], sl(self.head_w.as_slice())),
            (TENSOR_NAMES[7], sl(self.head_b.as_slice())),
            (TENSOR_NAMES[8], sl(self.out_w.as_slice())),
            (TENSOR_NAMES[9], sl(self.out_b.as_slice())),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 10] {
        fn sl(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("standard layout")
        }
        [
            (TENSOR_NAMES[0], sl(self.enc_w1.as_slice_mut())),
            (TENSOR_NAMES[1], sl(self.enc_b1.as_slice_mut())),
            (TENSOR_NAMES[2], sl(self.enc_w2.as_slice_mut())),
            (TENSOR_NAMES[3], sl(self.enc_b2.as_slice_mut())),
            (TENSOR_NAMES[4], sl(self.attention.mu.as_slice_mut())),
            (TENSOR_NAMES[5], sl(self.attention.s.as_slice_mut())),
            (TENSOR_NAMES[6], sl(self.head_w.as_slice_mut())),
            (TENSOR_NAMES[7], sl(self.head_b.as_slice_mut())),
            (TENSOR_NAMES[8], sl(self.out_w.as_slice_mut())),
            (TENSOR_NAMES[9], sl(self.out_b.as_slice_mut())),
        ]
    }

    /// Shape of each tensor, in [`TENSOR_NAMES`] order.
    pub fn shapes(&self) -> [Vec<usize>; 10] {
        [
            self.enc_w1.shape().to_vec(),
            self.enc_b1.shape().to_vec(),
            self.enc_w2.shape().to_vec(),
            self.enc_b2.shape().to_vec(),
            self.attention.mu.shape().to_vec(),
            self.attention.s.shape().to_vec(),
            self.head_w.shape().to_vec(),
            self.head_b.shape().to_vec(),
            self.out_w.shape().to_vec(),
            self.out_b.shape().to_vec(),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    #[test]
    fn init_is_valid_and_sized() {
        let cfg = ModelConfig::new(4);
        let p = ModelParams::init(&cfg, &mut rng_from(1));
        p.validate().unwrap();
        assert_eq!(p.config(), cfg);
        assert!(p.attention.s.iter().all(|s| *s == 1.0));
        let expected = 23 * 64 + 64 + 64 * 32 + 32 + 32 * 32 + 32 + 1024 * 64 + 64 + 64 * 4 + 4;
        assert_eq!(p.num_params(), expected);
        assert_eq!(ModelParams::init(&cfg, &mut rng_from(1)), p);
    }

    #[test]
    fn validate_rejects_bad_params() {
        let cfg = ModelConfig::new(3);
        let mut p = ModelParams::init(&cfg, &mut rng_from(2));
        p.attention.s[0] = 0.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::init(&cfg, &mut rng_from(2));
        p.out_b = Array1::zeros(5);
        assert!(p.validate().is_err());
    }
}
