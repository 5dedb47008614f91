//! Forward pass, cross-entropy loss and analytic gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::attention::{attention_backward, distances, weights_from_distances};
use super::{ModelError, ModelParams, Result};
use crate::features::FeatureMatrix;

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct Trace {
    hidden: Array2<f64>,
    frames: Array2<f64>,
    dist: Array2<f64>,
    weights: Array2<f64>,
    embedding: Array1<f64>,
    fc: Array1<f64>,
    logits: Array1<f64>,
}

fn run(x: ArrayView2<f64>, p: &ModelParams) -> Result<Trace> {
    if x.ncols() != p.enc_w1.nrows() {
        return Err(ModelError::Shape(format!(
            "{}-dim frames for a {}-dim encoder",
            x.ncols(),
            p.enc_w1.nrows()
        )));
    }
    if x.nrows() == 0 {
        return Err(ModelError::NonPositiveFrames);
    }
    let hidden = (x.dot(&p.enc_w1) + &p.enc_b1).mapv_into(relu);
    let frames = hidden.dot(&p.enc_w2) + &p.enc_b2;
    let dist = distances(frames.view(), p.attention.mu.view());
    let weights = weights_from_distances(&dist, &p.attention.s);
    let pooled = weights.dot(&frames);
    let embedding = Array1::from_iter(pooled.iter().copied());
    let fc = (embedding.dot(&p.head_w) + &p.head_b).mapv_into(relu);
    let logits = fc.dot(&p.out_w) + &p.out_b;
    Ok(Trace {
        hidden,
        frames,
        dist,
        weights,
        embedding,
        fc,
        logits,
    })
}

/// Class logits for one utterance.
pub fn forward(feats: &FeatureMatrix, params: &ModelParams) -> Result<Array1<f64>> {
    Ok(run(feats.values().view(), params)?.logits)
}

/// Index of the largest logit; the lowest index wins ties.
pub fn predict(feats: &FeatureMatrix, params: &ModelParams) -> Result<usize> {
    let logits = forward(feats, params)?;
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let exp = logits.mapv(|v| (v - max).exp());
    let total = exp.sum();
    exp / total
}

/// Mean cross-entropy over `batch` (features, class index) and its gradient.
pub fn loss_and_grad(
    batch: &[(FeatureMatrix, usize)],
    params: &ModelParams,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(ModelError::Config("empty batch".into()));
    }
    let classes = params.out_b.len();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (feats, class) in batch {
        if *class >= classes {
            return Err(ModelError::Shape(format!(
                "class index {class} for {classes} outputs"
            )));
        }
        let x = feats.values().view();
        let tr = run(x, params)?;
        let probs = softmax(&tr.logits);
        loss -= probs[*class].max(f64::MIN_POSITIVE).ln() * scale;

        let mut d_logits = probs;
        d_logits[*class] -= 1.0;
        d_logits *= scale;

        grads.out_b += &d_logits;
        grads.out_w += &outer(&tr.fc, &d_logits);
        let mut d_fc = params.out_w.dot(&d_logits);
        d_fc.zip_mut_with(&tr.fc, |g, a| {
            if *a <= 0.0 {
                *g = 0.0
            }
        });

        grads.head_b += &d_fc;
        grads.head_w += &outer(&tr.embedding, &d_fc);
        let d_emb = params.head_w.dot(&d_fc);
        let d_pooled = d_emb
            .into_shape_with_order(params.attention.mu.raw_dim())
            .expect("embedding is heads x enc_dim");

        let ag = attention_backward(
            tr.frames.view(),
            &params.attention,
            &tr.dist,
            &tr.weights,
            &d_pooled,
        );
        grads.attention.mu += &ag.dmu;
        grads.attention.s += &ag.ds;

        grads.enc_b2 += &ag.dx.sum_axis(Axis(0));
        grads.enc_w2 += &tr.hidden.t().dot(&ag.dx);
        let mut d_hidden = ag.dx.dot(&params.enc_w2.t());
        d_hidden.zip_mut_with(&tr.hidden, |g, a| {
            if *a <= 0.0 {
                *g = 0.0
            }
        });
        grads.enc_b1 += &d_hidden.sum_axis(Axis(0));
        grads.enc_w1 += &x.t().dot(&d_hidden);
    }
    Ok((loss, grads))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionParams, ModelConfig};
    use crate::seeding::rng_from;
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 5,
            enc_dim: 3,
            heads: 2,
            fc_dim: 4,
            num_classes: 3,
        }
    }

    fn random_feats<R: Rng>(t: usize, d: usize, rng: &mut R) -> FeatureMatrix {
        FeatureMatrix::from_values(Array2::from_shape_simple_fn((t, d), || {
            rng.gen_range(-1.5..1.5)
        }))
        .unwrap()
    }

    #[test]
    fn zero_output_layer_gives_uniform_softmax() {
        let cfg = small_config();
        let mut p = ModelParams::init(&cfg, &mut rng_from(1));
        p.out_w.fill(0.0);
        let f = random_feats(6, 4, &mut rng_from(2));
        let logits = forward(&f, &p).unwrap();
        assert!(logits.iter().all(|v| *v == 0.0));
        let (loss, _) = loss_and_grad(&[(f, 1)], &p).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_frames_are_order_invariant() {
        let cfg = small_config();
        let p = ModelParams::init(&cfg, &mut rng_from(3));
        let f = FeatureMatrix::from_values(Array2::from_elem((5, 4), 0.3)).unwrap();
        let mut rev = f.values().clone();
        rev.invert_axis(Axis(0));
        let g = FeatureMatrix::from_values(rev).unwrap();
        assert_eq!(forward(&f, &p).unwrap(), forward(&g, &p).unwrap());
    }

    #[test]
    fn uniform_weights_make_forward_permutation_invariant() {
        let cfg = small_config();
        let mut p = ModelParams::init(&cfg, &mut rng_from(4));
        // vanishing sharpness makes every head a plain mean
        p.attention.s.fill(1e-300);
        let f = random_feats(7, 4, &mut rng_from(5));
        let mut perm = f.values().clone();
        perm.invert_axis(Axis(0));
        let g = FeatureMatrix::from_values(perm).unwrap();
        let (a, b) = (forward(&f, &p).unwrap(), forward(&g, &p).unwrap());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_hand_stepped_chain() {
        // 1 input dim, 1 hidden, 1 enc, 1 head, 1 fc, 2 classes
        let p = ModelParams {
            enc_w1: Array2::from_elem((1, 1), 2.0),
            enc_b1: Array1::from_elem(1, -1.0),
            enc_w2: Array2::from_elem((1, 1), 0.5),
            enc_b2: Array1::from_elem(1, 0.25),
            attention: AttentionParams {
                mu: Array2::from_elem((1, 1), 1.0),
                s: Array1::from_elem(1, 2.0),
            },
            head_w: Array2::from_elem((1, 1), 3.0),
            head_b: Array1::from_elem(1, 0.1),
            out_w: Array2::from_shape_vec((1, 2), vec![1.0, -2.0]).unwrap(),
            out_b: Array1::from_vec(vec![0.0, 0.5]),
        };
        let f = FeatureMatrix::from_values(Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap())
            .unwrap();
        // hidden: relu(2*1-1)=1, relu(2*2-1)=3; frames: 0.75, 1.75
        // distances to 1.0: 0.25, 0.75; scores -0.5, -1.5
        let w0 = 1.0 / (1.0 + (-1.0f64).exp());
        let e = w0 * 0.75 + (1.0 - w0) * 1.75;
        let fc = (3.0 * e + 0.1f64).max(0.0);
        let expected = [fc, -2.0 * fc + 0.5];
        let got = forward(&f, &p).unwrap();
        for (g, x) in got.iter().zip(expected) {
            assert!((g - x).abs() < 1e-9, "{g} vs {x}");
        }
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_grads() {
        let cfg = small_config();
        let p = ModelParams::init(&cfg, &mut rng_from(6));
        let mut rng = rng_from(7);
        let batch: Vec<_> = (0..3)
            .map(|i| (random_feats(4 + i, 4, &mut rng), i % 3))
            .collect();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        let (l1, g1) = loss_and_grad(&batch, &p).unwrap();
        let (l2, g2) = loss_and_grad(&doubled, &p).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn loss_only(batch: &[(FeatureMatrix, usize)], p: &ModelParams) -> f64 {
        // independent of the backward pass: cross-entropy straight from the logits
        let mut total = 0.0;
        for (f, c) in batch {
            let z = forward(f, p).unwrap();
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            total += lse - z[*c];
        }
        total / batch.len() as f64
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let cfg = small_config();
        for seed in 0..5u64 {
            let mut rng = rng_from(100 + seed);
            let mut p = ModelParams::init(&cfg, &mut rng);
            p.attention.s.mapv_inplace(|_| rng.gen_range(0.3..2.0));
            p.enc_b1.mapv_inplace(|_| rng.gen_range(-0.2..0.2));
            p.head_b.mapv_inplace(|_| rng.gen_range(0.0..0.3));
            let batch: Vec<_> = (0..3)
                .map(|i| (random_feats(3 + 2 * i, 4, &mut rng), i))
                .collect();
            let (_, grads) = loss_and_grad(&batch, &p).unwrap();
            let h = 1e-5;
            let mut probe = p.clone();
            for (g, (name, analytic)) in grads.tensors().iter().enumerate() {
                let mut numeric = vec![0.0; analytic.len()];
                for (i, n) in numeric.iter_mut().enumerate() {
                    let orig = probe.tensors()[g].1[i];
                    probe.tensors_mut()[g].1[i] = orig + h;
                    let up = loss_only(&batch, &probe);
                    probe.tensors_mut()[g].1[i] = orig - h;
                    let down = loss_only(&batch, &probe);
                    probe.tensors_mut()[g].1[i] = orig;
                    *n = (up - down) / (2.0 * h);
                }
                let diff: f64 = analytic
                    .iter()
                    .zip(&numeric)
                    .map(|(a, n)| (a - n).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
                let rel = diff / na.max(nn).max(1e-12);
                assert!(rel < 1e-5, "seed {seed} {name}: relative error {rel}");
            }
        }
    }

    #[test]
    fn rejects_wrong_width_and_empty_batch() {
        let cfg = small_config();
        let p = ModelParams::init(&cfg, &mut rng_from(8));
        let f = random_feats(3, 5, &mut rng_from(9));
        assert!(forward(&f, &p).is_err());
        assert!(loss_and_grad(&[], &p).is_err());
    }
}
