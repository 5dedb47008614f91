//! Multi-head attention pooling.
//!
//! Head h scores frame t by `-s_h * ||x_t - mu_h||`, normalizes the scores over time with a
//! softmax and returns the weighted average of the frames.

use ndarray::{Array1, Array2, ArrayView2};

use super::{ModelError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// Head centers, `heads x enc_dim`.
    pub mu: Array2<f64>,
    /// Head sharpness, one positive value per head.
    pub s: Array1<f64>,
}

impl AttentionParams {
    pub fn heads(&self) -> usize {
        self.mu.nrows()
    }
}

/// Euclidean distance from every frame to every head center, `heads x frames`.
pub(crate) fn distances(x: ArrayView2<f64>, mu: ArrayView2<f64>) -> Array2<f64> {
    let (t_len, h_len) = (x.nrows(), mu.nrows());
    let mut d = Array2::zeros((h_len, t_len));
    for h in 0..h_len {
        let center = mu.row(h);
        for t in 0..t_len {
            let sq: f64 = x
                .row(t)
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[(h, t)] = sq.sqrt();
        }
    }
    d
}

/// Softmax over time of `-s_h * dist[h, t]`, shifted by the row maximum.
pub(crate) fn weights_from_distances(dist: &Array2<f64>, s: &Array1<f64>) -> Array2<f64> {
    let mut w = Array2::zeros(dist.raw_dim());
    for (h, (drow, mut wrow)) in dist.rows().into_iter().zip(w.rows_mut()).enumerate() {
        let sh = s[h];
        let min_d = drow.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let mut total = 0.0;
        for (wv, dv) in wrow.iter_mut().zip(drow.iter()) {
            *wv = (-sh * (dv - min_d)).exp();
            total += *wv;
        }
        wrow.mapv_inplace(|v| v / total);
    }
    w
}

/// Attention weights, `heads x frames`; each row sums to one.
///
/// Panics if the frame width differs from the head-center width.
pub fn attention_weights(x: ArrayView2<f64>, params: &AttentionParams) -> Array2<f64> {
    assert_eq!(x.ncols(), params.mu.ncols(), "frame width vs head centers");
    weights_from_distances(&distances(x, params.mu.view()), &params.s)
}

/// Pooled embeddings `e_h = sum_t w[h, t] x_t`, `heads x enc_dim`.
pub fn attention_pool(x: ArrayView2<f64>, w: ArrayView2<f64>) -> Result<Array2<f64>> {
    if w.ncols() != x.nrows() {
        return Err(ModelError::Shape(format!(
            "{} weights per head for {} frames",
            w.ncols(),
            x.nrows()
        )));
    }
    Ok(w.dot(&x))
}

/// Gradients of the pooled embeddings with respect to frames, centers and sharpness.
pub(crate) struct AttentionGrads {
    pub dx: Array2<f64>,
    pub dmu: Array2<f64>,
    pub ds: Array1<f64>,
}

/// Back-propagates `d_e` (`heads x enc_dim`) through pooling and the softmax scores.
///
/// Where a frame coincides with a head center the distance is not differentiable; its
/// subgradient is taken as zero.
pub(crate) fn attention_backward(
    x: ArrayView2<f64>,
    params: &AttentionParams,
    dist: &Array2<f64>,
    w: &Array2<f64>,
    d_e: &Array2<f64>,
) -> AttentionGrads {
    let (h_len, t_len) = w.dim();
    // dL/dw[h,t] = d_e[h] . x_t
    let gw = d_e.dot(&x.t());
    let mut coef = Array2::<f64>::zeros((h_len, t_len));
    let mut ds = Array1::<f64>::zeros(h_len);
    for h in 0..h_len {
        let mean_g: f64 = (0..t_len).map(|t| w[(h, t)] * gw[(h, t)]).sum();
        let sh = params.s[h];
        let mut acc_s = 0.0;
        for t in 0..t_len {
            let d_score = w[(h, t)] * (gw[(h, t)] - mean_g);
            acc_s -= d_score * dist[(h, t)];
            let d_dist = -sh * d_score;
            if dist[(h, t)] > 0.0 {
                coef[(h, t)] = d_dist / dist[(h, t)];
            }
        }
        ds[h] = acc_s;
    }
    // d||x_t - mu_h|| / dx_t = (x_t - mu_h) / ||.||, and the negative for mu_h
    let coef_sum_t = coef.sum_axis(ndarray::Axis(0));
    let coef_sum_h = coef.sum_axis(ndarray::Axis(1));
    let mut dx = w.t().dot(d_e);
    dx += &(&x * &coef_sum_t.insert_axis(ndarray::Axis(1)));
    dx -= &coef.t().dot(&params.mu);
    let mut dmu = &params.mu * &coef_sum_h.insert_axis(ndarray::Axis(1));
    dmu -= &coef.dot(&x);
    AttentionGrads { dx, dmu, ds }
}
