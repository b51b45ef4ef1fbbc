use ndarray::{Array2, Axis};
use rand::RngCore;

use super::block::{block_backward, block_forward, head_logits, BlockCache, BlockShape, Dropout};
use super::params::EncoderParams;
use super::rope::{rope_frequencies, RopeTable};
use super::EncoderConfig;
use crate::error::{invalid, Error, Result};
use crate::nn::{layer_norm, layer_norm_backward, LayerNormCache};
use crate::tokenizer::TokenSequence;

/// Attention weights per layer, per head (`S x S`, rows are queries).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<Array2<f64>>>,
}

impl AttentionTrace {
    /// Head-averaged attention of the final layer.
    pub fn final_layer_mean(&self) -> Option<Array2<f64>> {
        let heads = self.layers.last()?;
        let mut acc = heads.first()?.clone();
        for h in &heads[1..] {
            acc += h;
        }
        acc /= heads.len() as f64;
        Some(acc)
    }
}

/// Contextualized token vectors, one row per input position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub states: Array2<f64>,
    pub trace: Option<AttentionTrace>,
}

impl HiddenStates {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

pub(crate) struct EncoderCache {
    ids: Vec<u32>,
    rope: RopeTable,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
}

fn check_inputs(seq: &TokenSequence, params: &EncoderParams, config: &EncoderConfig) -> Result<()> {
    config.validate()?;
    if !params.matches(config) {
        return Err(Error::Shape("encoder parameters do not match the config".into()));
    }
    if seq.ids.is_empty() {
        return Err(invalid("empty token sequence"));
    }
    if seq.ids.len() != seq.mask.len() {
        return Err(Error::Shape(format!("{} ids but {} mask entries", seq.ids.len(), seq.mask.len())));
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab_size: config.vocab_size });
    }
    Ok(())
}

fn shape(config: &EncoderConfig) -> BlockShape {
    BlockShape { n_heads: config.n_heads, d_head: config.d_head }
}

fn embed(seq: &TokenSequence, params: &EncoderParams) -> Array2<f64> {
    params.embed.select(Axis(0), &seq.ids.iter().map(|&i| i as usize).collect::<Vec<_>>())
}

fn run(
    seq: &TokenSequence,
    params: &EncoderParams,
    config: &EncoderConfig,
    offset: usize,
    mut dropout: Option<&mut Dropout<'_>>,
    mut on_block: impl FnMut(BlockCache),
) -> Result<(Array2<f64>, RopeTable, LayerNormCache)> {
    check_inputs(seq, params, config)?;
    let theta = rope_frequencies(config.d_head, config.rope_base)?;
    let rope = RopeTable::new(&theta, seq.len(), offset);
    let keep: Vec<bool> = seq.mask.iter().map(|&m| m == 1).collect();
    let shape = shape(config);
    let mut x = embed(seq, params);
    for layer in &params.layers {
        let (y, cache) = block_forward(&x, layer, &rope, &keep, &shape, dropout.as_deref_mut());
        on_block(cache);
        x = y;
    }
    let (out, final_ln) = layer_norm(&x, &params.final_gain, &params.final_bias);
    Ok((out, rope, final_ln))
}

/// Encodes `seq` into hidden states; with `trace`, attention weights of
/// every layer and head are kept.
pub fn forward(
    seq: &TokenSequence,
    params: &EncoderParams,
    config: &EncoderConfig,
    trace: bool,
) -> Result<HiddenStates> {
    forward_at(seq, params, config, trace, 0)
}

/// Like [`forward`], with every position shifted by `offset`.
pub fn forward_at(
    seq: &TokenSequence,
    params: &EncoderParams,
    config: &EncoderConfig,
    trace: bool,
    offset: usize,
) -> Result<HiddenStates> {
    let mut layers = Vec::new();
    let (states, _, _) = run(seq, params, config, offset, None, |cache| {
        if trace {
            layers.push(cache.probs);
        }
    })?;
    Ok(HiddenStates { states, trace: trace.then_some(AttentionTrace { layers }) })
}

/// Pre-softmax attention logits of one head in one layer.
pub fn attention_logits(
    seq: &TokenSequence,
    params: &EncoderParams,
    config: &EncoderConfig,
    layer: usize,
    head: usize,
    offset: usize,
) -> Result<Array2<f64>> {
    if layer >= config.layers || head >= config.n_heads {
        return Err(invalid(format!("no head {head} in layer {layer}")));
    }
    let mut caches = Vec::new();
    let truncated = EncoderParams {
        embed: params.embed.clone(),
        layers: params.layers[..=layer].to_vec(),
        final_gain: params.final_gain.clone(),
        final_bias: params.final_bias.clone(),
    };
    let cfg = EncoderConfig { layers: layer + 1, ..config.clone() };
    run(seq, &truncated, &cfg, offset, None, |c| caches.push(c))?;
    let c = caches.pop().expect("at least one block ran");
    Ok(head_logits(c.q_rotated(), c.k_rotated(), head, config.d_head))
}

impl BlockCache {
    pub(crate) fn q_rotated(&self) -> &Array2<f64> {
        &self.q
    }

    pub(crate) fn k_rotated(&self) -> &Array2<f64> {
        &self.k
    }
}

/// Forward pass that keeps everything needed by [`backward`].
pub(crate) fn forward_train(
    seq: &TokenSequence,
    params: &EncoderParams,
    config: &EncoderConfig,
    rng: Option<&mut dyn RngCore>,
) -> Result<(Array2<f64>, EncoderCache)> {
    let mut blocks = Vec::with_capacity(config.layers);
    let mut dropout = match rng {
        Some(rng) if config.dropout > 0.0 => Some(Dropout { p: config.dropout, rng }),
        _ => None,
    };
    let (out, rope, final_ln) = run(seq, params, config, 0, dropout.as_mut(), |c| blocks.push(c))?;
    Ok((out, EncoderCache { ids: seq.ids.clone(), rope, blocks, final_ln }))
}

/// Accumulates parameter gradients for `d_states` (dL/d hidden states).
pub(crate) fn backward(
    d_states: &Array2<f64>,
    cache: &EncoderCache,
    params: &EncoderParams,
    config: &EncoderConfig,
    grads: &mut EncoderParams,
) {
    let shape = shape(config);
    let mut dx = layer_norm_backward(
        d_states,
        &cache.final_ln,
        &params.final_gain,
        &mut grads.final_gain,
        &mut grads.final_bias,
    );
    for (i, block) in cache.blocks.iter().enumerate().rev() {
        dx = block_backward(&dx, block, &params.layers[i], &cache.rope, &shape, &mut grads.layers[i]);
    }
    for (row, &id) in dx.rows().into_iter().zip(&cache.ids) {
        let mut dst = grads.embed.row_mut(id as usize);
        dst += &row;
    }
}

