//! Latent-attention pooling head.
//!
//! Token queries `q_i = h_i W_q` attend over keys and values projected from
//! a learned latent matrix (`k = L W_k`, `v = L W_v`), followed by a
//! pre-norm feed-forward residual:
//!
//! ```text
//! y_i = softmax(LN(q_i) k^T / sqrt(d_h)) v + q_i
//! z_i = FFN(LN(y_i)) + y_i
//! out = mean_i(z_i) W_out
//! ```
//!
//! The mean runs over unmasked rows; `W_out` maps back to `d_model`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, masked_softmax_rows, normal_matrix, slice1, slice1_mut, slice2,
    slice2_mut, softmax_rows_backward, LayerNormCache, ParamTensors,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    pub latents: usize,
    pub latent_dim: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self { latents: 64, latent_dim: 64, head_dim: 64, ffn_dim: 256 }
    }
}

impl LatentConfig {
    /// Default head sized to an encoder width.
    pub fn for_model(d_model: usize) -> Self {
        Self { latents: 64, latent_dim: d_model, head_dim: d_model, ffn_dim: 4 * d_model }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latents < 1 || self.latent_dim < 1 || self.head_dim < 1 || self.ffn_dim < 1 {
            return Err(invalid("latent attention dimensions must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentAttentionParams {
    pub latents: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_1: Array2<f64>,
    pub b_1: Array1<f64>,
    pub w_2: Array2<f64>,
    pub b_2: Array1<f64>,
    pub w_out: Array2<f64>,
}

impl LatentAttentionParams {
    pub fn zeros(d_model: usize, c: &LatentConfig) -> Self {
        Self {
            latents: Array2::zeros((c.latents, c.latent_dim)),
            w_q: Array2::zeros((d_model, c.head_dim)),
            w_k: Array2::zeros((c.latent_dim, c.head_dim)),
            w_v: Array2::zeros((c.latent_dim, c.head_dim)),
            ln1_gain: Array1::zeros(c.head_dim),
            ln1_bias: Array1::zeros(c.head_dim),
            ln2_gain: Array1::zeros(c.head_dim),
            ln2_bias: Array1::zeros(c.head_dim),
            w_1: Array2::zeros((c.head_dim, c.ffn_dim)),
            b_1: Array1::zeros(c.ffn_dim),
            w_2: Array2::zeros((c.ffn_dim, c.head_dim)),
            b_2: Array1::zeros(c.head_dim),
            w_out: Array2::zeros((c.head_dim, d_model)),
        }
    }

    pub fn init<R: Rng + ?Sized>(d_model: usize, c: &LatentConfig, rng: &mut R) -> Self {
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        Self {
            latents: normal_matrix(c.latents, c.latent_dim, 1.0, rng),
            w_q: normal_matrix(d_model, c.head_dim, fan(d_model), rng),
            w_k: normal_matrix(c.latent_dim, c.head_dim, fan(c.latent_dim), rng),
            w_v: normal_matrix(c.latent_dim, c.head_dim, fan(c.latent_dim), rng),
            ln1_gain: Array1::ones(c.head_dim),
            ln1_bias: Array1::zeros(c.head_dim),
            ln2_gain: Array1::ones(c.head_dim),
            ln2_bias: Array1::zeros(c.head_dim),
            w_1: normal_matrix(c.head_dim, c.ffn_dim, fan(c.head_dim), rng),
            b_1: Array1::zeros(c.ffn_dim),
            w_2: normal_matrix(c.ffn_dim, c.head_dim, fan(c.ffn_dim), rng),
            b_2: Array1::zeros(c.head_dim),
            w_out: normal_matrix(c.head_dim, d_model, fan(c.head_dim), rng),
        }
    }

    pub fn config(&self) -> LatentConfig {
        LatentConfig {
            latents: self.latents.nrows(),
            latent_dim: self.latents.ncols(),
            head_dim: self.w_q.ncols(),
            ffn_dim: self.w_1.ncols(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.nrows()
    }

    fn check(&self, d_model: usize) -> Result<()> {
        let c = self.config();
        let ok = self.w_q.nrows() == d_model
            && self.w_k.dim() == (c.latent_dim, c.head_dim)
            && self.w_v.dim() == (c.latent_dim, c.head_dim)
            && self.ln1_gain.len() == c.head_dim
            && self.ln2_gain.len() == c.head_dim
            && self.w_2.dim() == (c.ffn_dim, c.head_dim)
            && self.b_1.len() == c.ffn_dim
            && self.w_out.dim() == (c.head_dim, d_model);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("latent attention head does not fit d_model {d_model}")))
        }
    }
}

impl ParamTensors for LatentAttentionParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("latent.latents".into(), slice2(&self.latents)),
            ("latent.w_q".into(), slice2(&self.w_q)),
            ("latent.w_k".into(), slice2(&self.w_k)),
            ("latent.w_v".into(), slice2(&self.w_v)),
            ("latent.ln1_gain".into(), slice1(&self.ln1_gain)),
            ("latent.ln1_bias".into(), slice1(&self.ln1_bias)),
            ("latent.ln2_gain".into(), slice1(&self.ln2_gain)),
            ("latent.ln2_bias".into(), slice1(&self.ln2_bias)),
            ("latent.w_1".into(), slice2(&self.w_1)),
            ("latent.b_1".into(), slice1(&self.b_1)),
            ("latent.w_2".into(), slice2(&self.w_2)),
            ("latent.b_2".into(), slice1(&self.b_2)),
            ("latent.w_out".into(), slice2(&self.w_out)),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("latent.latents".into(), slice2_mut(&mut self.latents)),
            ("latent.w_q".into(), slice2_mut(&mut self.w_q)),
            ("latent.w_k".into(), slice2_mut(&mut self.w_k)),
            ("latent.w_v".into(), slice2_mut(&mut self.w_v)),
            ("latent.ln1_gain".into(), slice1_mut(&mut self.ln1_gain)),
            ("latent.ln1_bias".into(), slice1_mut(&mut self.ln1_bias)),
            ("latent.ln2_gain".into(), slice1_mut(&mut self.ln2_gain)),
            ("latent.ln2_bias".into(), slice1_mut(&mut self.ln2_bias)),
            ("latent.w_1".into(), slice2_mut(&mut self.w_1)),
            ("latent.b_1".into(), slice1_mut(&mut self.b_1)),
            ("latent.w_2".into(), slice2_mut(&mut self.w_2)),
            ("latent.b_2".into(), slice1_mut(&mut self.b_2)),
            ("latent.w_out".into(), slice2_mut(&mut self.w_out)),
        ]
    }
}

pub(crate) struct LatentCache {
    rows: Vec<usize>,
    states: Array2<f64>,
    q_norm: Array2<f64>,
    ln1: LayerNormCache,
    keys: Array2<f64>,
    values: Array2<f64>,
    attn: Array2<f64>,
    y_norm: Array2<f64>,
    ln2: LayerNormCache,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    pooled: Array1<f64>,
}

/// Per-token outputs `z_i` for the selected rows, plus everything the
/// backward pass needs.
pub(crate) fn latent_forward(
    states: &Array2<f64>,
    rows: &[usize],
    p: &LatentAttentionParams,
) -> Result<(Array2<f64>, Array1<f64>, LatentCache)> {
    p.check(states.ncols())?;
    if rows.is_empty() {
        return Err(Error::NoUnmaskedRows);
    }
    let selected = states.select(Axis(0), rows);
    let q = selected.dot(&p.w_q);
    let (q_norm, ln1) = layer_norm(&q, &p.ln1_gain, &p.ln1_bias);
    let keys = p.latents.dot(&p.w_k);
    let values = p.latents.dot(&p.w_v);
    let scale = 1.0 / (p.w_q.ncols() as f64).sqrt();
    let mut attn = Array2::zeros((rows.len(), keys.nrows()));
    general_mat_mul(scale, &q_norm, &keys.t(), 0.0, &mut attn);
    masked_softmax_rows(&mut attn, &vec![true; keys.nrows()]);
    let y = attn.dot(&values) + &q;
    let (y_norm, ln2) = layer_norm(&y, &p.ln2_gain, &p.ln2_bias);
    let hidden_pre = y_norm.dot(&p.w_1) + &p.b_1;
    let hidden = hidden_pre.mapv(gelu);
    let z = hidden.dot(&p.w_2) + &p.b_2 + &y;
    let pooled = z.mean_axis(Axis(0)).expect("non-empty rows");
    let out = pooled.dot(&p.w_out);
    let cache = LatentCache {
        rows: rows.to_vec(),
        states: selected,
        q_norm,
        ln1,
        keys,
        values,
        attn,
        y_norm,
        ln2,
        hidden_pre,
        hidden,
        pooled,
    };
    Ok((z, out, cache))
}

/// Returns dL/d hidden states (zero rows outside the selection).
pub(crate) fn latent_backward(
    d_out: &Array1<f64>,
    cache: &LatentCache,
    p: &LatentAttentionParams,
    g: &mut LatentAttentionParams,
    seq_len: usize,
) -> Array2<f64> {
    let r = cache.rows.len();
    let d_model = p.w_q.nrows();
    // out = pooled W_out
    for (i, &pv) in cache.pooled.iter().enumerate() {
        let mut row = g.w_out.row_mut(i);
        row.scaled_add(pv, d_out);
    }
    let d_pooled = p.w_out.dot(d_out);
    let mut d_z = Array2::zeros((r, d_pooled.len()));
    for mut row in d_z.rows_mut() {
        row.assign(&(&d_pooled / r as f64));
    }
    // z = FFN(LN(y)) + y
    g.b_2 += &d_z.sum_axis(Axis(0));
    general_mat_mul(1.0, &cache.hidden.t(), &d_z, 1.0, &mut g.w_2);
    let mut d_hidden = d_z.dot(&p.w_2.t());
    d_hidden.zip_mut_with(&cache.hidden_pre, |d, &pre| *d *= gelu_grad(pre));
    g.b_1 += &d_hidden.sum_axis(Axis(0));
    general_mat_mul(1.0, &cache.y_norm.t(), &d_hidden, 1.0, &mut g.w_1);
    let d_y_norm = d_hidden.dot(&p.w_1.t());
    let mut d_y = layer_norm_backward(&d_y_norm, &cache.ln2, &p.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
    d_y += &d_z;
    // y = softmax(LN(q) k^T * scale) v + q
    let d_attn = d_y.dot(&cache.values.t());
    let d_values = cache.attn.t().dot(&d_y);
    let scale = 1.0 / (p.w_q.ncols() as f64).sqrt();
    let d_logits = softmax_rows_backward(cache.attn.view(), &d_attn) * scale;
    let d_q_norm = d_logits.dot(&cache.keys);
    let d_keys = d_logits.t().dot(&cache.q_norm);
    general_mat_mul(1.0, &p.latents.t(), &d_keys, 1.0, &mut g.w_k);
    general_mat_mul(1.0, &p.latents.t(), &d_values, 1.0, &mut g.w_v);
    general_mat_mul(1.0, &d_keys, &p.w_k.t(), 1.0, &mut g.latents);
    general_mat_mul(1.0, &d_values, &p.w_v.t(), 1.0, &mut g.latents);
    let mut d_q = layer_norm_backward(&d_q_norm, &cache.ln1, &p.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    d_q += &d_y;
    general_mat_mul(1.0, &cache.states.t(), &d_q, 1.0, &mut g.w_q);
    let d_selected = d_q.dot(&p.w_q.t());
    let mut d_states = Array2::zeros((seq_len, d_model));
    for (k, &row) in cache.rows.iter().enumerate() {
        let mut dst = d_states.row_mut(row);
        dst += &d_selected.row(k);
    }
    d_states
}
