//! Forward and backward pass of one pre-norm transformer block.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, RngCore};

use super::params::LayerParams;
use super::rope::RopeTable;
use crate::nn::{gelu, gelu_grad, layer_norm, layer_norm_backward, masked_softmax_rows, softmax_rows_backward, LayerNormCache};

/// Inverted dropout applied to residual branches during training.
pub(crate) struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    fn mask(&mut self, shape: (usize, usize)) -> Array2<f64> {
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        let rng = &mut self.rng;
        Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
    }
}

pub(crate) struct BlockShape {
    pub n_heads: usize,
    pub d_head: usize,
}

pub(crate) struct BlockCache {
    ln1: LayerNormCache,
    normed: Array2<f64>,
    pub(super) q: Array2<f64>,
    pub(super) k: Array2<f64>,
    v: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    ln2: LayerNormCache,
    normed2: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    ffn_drop: Option<Array2<f64>>,
}

/// Attention logits of one head, scaled by 1/sqrt(d_head), with keys
/// rotated to their positions.
pub(crate) fn head_logits(q: &Array2<f64>, k: &Array2<f64>, head: usize, d_head: usize) -> Array2<f64> {
    let cols = s![.., head * d_head..(head + 1) * d_head];
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut logits = Array2::zeros((q.nrows(), k.nrows()));
    general_mat_mul(scale, &q.slice(cols), &k.slice(cols).t(), 0.0, &mut logits);
    logits
}

pub(crate) fn block_forward(
    x: &Array2<f64>,
    p: &LayerParams,
    rope: &RopeTable,
    keep: &[bool],
    shape: &BlockShape,
    mut dropout: Option<&mut Dropout<'_>>,
) -> (Array2<f64>, BlockCache) {
    let (seq, d_model) = x.dim();
    let (normed, ln1) = layer_norm(x, &p.ln1_gain, &p.ln1_bias);
    let mut q = normed.dot(&p.w_q);
    let mut k = normed.dot(&p.w_k);
    let v = normed.dot(&p.w_v);
    rope.apply(&mut q, shape.n_heads, shape.d_head, false);
    rope.apply(&mut k, shape.n_heads, shape.d_head, false);

    let mut context = Array2::zeros((seq, d_model));
    let mut probs = Vec::with_capacity(shape.n_heads);
    for h in 0..shape.n_heads {
        let cols = s![.., h * shape.d_head..(h + 1) * shape.d_head];
        let mut pr = head_logits(&q, &k, h, shape.d_head);
        masked_softmax_rows(&mut pr, keep);
        let mut out = context.slice_mut(cols);
        general_mat_mul(1.0, &pr, &v.slice(cols), 0.0, &mut out);
        probs.push(pr);
    }
    let mut attn = context.dot(&p.w_o);
    let attn_drop = dropout.as_deref_mut().map(|d| d.mask(attn.dim()));
    if let Some(m) = &attn_drop {
        attn *= m;
    }
    let mut x1 = attn;
    x1 += x;

    let (normed2, ln2) = layer_norm(&x1, &p.ln2_gain, &p.ln2_bias);
    let hidden_pre = normed2.dot(&p.w_1) + &p.b_1;
    let hidden = hidden_pre.mapv(gelu);
    let mut ffn = hidden.dot(&p.w_2) + &p.b_2;
    let ffn_drop = dropout.map(|d| d.mask(ffn.dim()));
    if let Some(m) = &ffn_drop {
        ffn *= m;
    }
    ffn += &x1;
    (
        ffn,
        BlockCache {
            ln1,
            normed,
            q,
            k,
            v,
            probs,
            context,
            attn_drop,
            ln2,
            normed2,
            hidden_pre,
            hidden,
            ffn_drop,
        },
    )
}

fn add_row_sums(dst: &mut Array1<f64>, m: &Array2<f64>) {
    *dst += &m.sum_axis(Axis(0));
}

/// Backpropagates `d_out` through the block, accumulating into `grads`.
/// Returns the gradient with respect to the block input.
pub(crate) fn block_backward(
    d_out: &Array2<f64>,
    cache: &BlockCache,
    p: &LayerParams,
    rope: &RopeTable,
    shape: &BlockShape,
    grads: &mut LayerParams,
) -> Array2<f64> {
    // feed-forward branch
    let mut d_ffn = d_out.clone();
    if let Some(m) = &cache.ffn_drop {
        d_ffn *= m;
    }
    add_row_sums(&mut grads.b_2, &d_ffn);
    general_mat_mul(1.0, &cache.hidden.t(), &d_ffn, 1.0, &mut grads.w_2);
    let mut d_hidden = d_ffn.dot(&p.w_2.t());
    d_hidden.zip_mut_with(&cache.hidden_pre, |d, &pre| *d *= gelu_grad(pre));
    add_row_sums(&mut grads.b_1, &d_hidden);
    general_mat_mul(1.0, &cache.normed2.t(), &d_hidden, 1.0, &mut grads.w_1);
    let d_normed2 = d_hidden.dot(&p.w_1.t());
    let mut d_x1 = layer_norm_backward(&d_normed2, &cache.ln2, &p.ln2_gain, &mut grads.ln2_gain, &mut grads.ln2_bias);
    d_x1 += d_out;

    // attention branch
    let mut d_attn = d_x1.clone();
    if let Some(m) = &cache.attn_drop {
        d_attn *= m;
    }
    general_mat_mul(1.0, &cache.context.t(), &d_attn, 1.0, &mut grads.w_o);
    let d_context = d_attn.dot(&p.w_o.t());

    let mut d_q = Array2::zeros(cache.q.dim());
    let mut d_k = Array2::zeros(cache.k.dim());
    let mut d_v = Array2::zeros(cache.v.dim());
    let scale = 1.0 / (shape.d_head as f64).sqrt();
    for h in 0..shape.n_heads {
        let cols = s![.., h * shape.d_head..(h + 1) * shape.d_head];
        let pr = &cache.probs[h];
        let dc = d_context.slice(cols);
        general_mat_mul(1.0, &pr.t(), &dc, 0.0, &mut d_v.slice_mut(cols));
        let d_probs = dc.dot(&cache.v.slice(cols).t());
        let d_logits = softmax_rows_backward(pr.view(), &d_probs);
        general_mat_mul(scale, &d_logits, &cache.k.slice(cols), 0.0, &mut d_q.slice_mut(cols));
        general_mat_mul(scale, &d_logits.t(), &cache.q.slice(cols), 0.0, &mut d_k.slice_mut(cols));
    }
    rope.apply(&mut d_q, shape.n_heads, shape.d_head, true);
    rope.apply(&mut d_k, shape.n_heads, shape.d_head, true);

    general_mat_mul(1.0, &cache.normed.t(), &d_q, 1.0, &mut grads.w_q);
    general_mat_mul(1.0, &cache.normed.t(), &d_k, 1.0, &mut grads.w_k);
    general_mat_mul(1.0, &cache.normed.t(), &d_v, 1.0, &mut grads.w_v);
    let mut d_normed = d_q.dot(&p.w_q.t());
    general_mat_mul(1.0, &d_k, &p.w_k.t(), 1.0, &mut d_normed);
    general_mat_mul(1.0, &d_v, &p.w_v.t(), 1.0, &mut d_normed);
    let mut d_x = layer_norm_backward(&d_normed, &cache.ln1, &p.ln1_gain, &mut grads.ln1_gain, &mut grads.ln1_bias);
    d_x += &d_x1;
    d_x
}
