//! Masked-autoencoder pretraining with a one-block bottleneck decoder.
//!
//! The encoder reads a lightly masked copy of a text and is pooled into a
//! sentence vector. The decoder reads a heavily masked copy with that vector
//! added to every input row and predicts the hidden tokens through the
//! (tied) token embedding matrix.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use crate::encoder::{backward, block_backward, block_forward, forward_train, BlockShape, LayerParams, RopeTable};
use crate::encoder::rope_frequencies;
use crate::error::{invalid, Error, Result};
use crate::model::{EncodeOptions, Model};
use crate::nn::{reborrow, layer_norm, layer_norm_backward, slice1, slice1_mut, ParamTensors};
use crate::pooling::{pool_backward, pool_train, PoolingStrategy};
use crate::tokenizer::{standard_encode, ChunkingStrategy, TokenId, TokenSequence, Vocabulary, MASK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetroMaeConfig {
    pub encoder_mask_ratio: f64,
    pub decoder_mask_ratio: f64,
    pub max_len: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub pooling: PoolingStrategy,
    pub chunking: ChunkingStrategy,
    pub seed: u64,
}

impl Default for RetroMaeConfig {
    fn default() -> Self {
        Self {
            encoder_mask_ratio: 0.3,
            decoder_mask_ratio: 0.5,
            max_len: 128,
            steps: 500,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 50,
            pooling: PoolingStrategy::LMK,
            chunking: ChunkingStrategy::default(),
            seed: 0,
        }
    }
}

impl RetroMaeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("encoder_mask_ratio", self.encoder_mask_ratio), ("decoder_mask_ratio", self.decoder_mask_ratio)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if !matches!(self.pooling, PoolingStrategy::Cls | PoolingStrategy::MarkerMean { .. }) {
            return Err(invalid(format!("pretraining supports cls or marker pooling, not {}", self.pooling)));
        }
        if self.batch_size == 0 || self.max_len < 3 {
            return Err(invalid("batch_size must be positive and max_len at least 3"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        self.pooling.validate()
    }
}

/// Decoder: one transformer block and a final layer norm. Output logits use
/// the encoder's token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub block: LayerParams,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
}

impl DecoderParams {
    pub fn zeros(d_model: usize, ffn_dim: usize) -> Self {
        Self {
            block: LayerParams::zeros(d_model, ffn_dim),
            final_gain: Array1::zeros(d_model),
            final_bias: Array1::zeros(d_model),
        }
    }

    pub fn init<R: Rng + ?Sized>(d_model: usize, ffn_dim: usize, rng: &mut R) -> Self {
        Self {
            block: LayerParams::init(d_model, ffn_dim, rng),
            final_gain: Array1::ones(d_model),
            final_bias: Array1::zeros(d_model),
        }
    }
}

/// Encoder, pooling head and decoder, updated by one optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RetroMaeParams {
    pub model: Model,
    pub decoder: DecoderParams,
}

impl RetroMaeParams {
    fn zeros_like(&self) -> Self {
        Self {
            model: self.model.zeros_like(),
            decoder: DecoderParams::zeros(self.model.config.d_model, self.model.config.ffn_dim),
        }
    }
}

impl ParamTensors for RetroMaeParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = self.model.tensors();
        out.extend(self.decoder.block.named("decoder.block"));
        out.push(("decoder.final_gain".into(), slice1(&self.decoder.final_gain)));
        out.push(("decoder.final_bias".into(), slice1(&self.decoder.final_bias)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.model.tensors_mut();
        out.extend(self.decoder.block.named_mut("decoder.block"));
        out.push(("decoder.final_gain".into(), slice1_mut(&mut self.decoder.final_gain)));
        out.push(("decoder.final_bias".into(), slice1_mut(&mut self.decoder.final_bias)));
        out
    }
}

/// One text prepared for reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedExample {
    pub encoder_input: TokenSequence,
    pub decoder_input: TokenSequence,
    /// `(position in decoder_input, original id)` for every masked slot.
    pub targets: Vec<(usize, TokenId)>,
}

fn mask_positions<R: Rng + ?Sized>(positions: &[usize], ratio: f64, rng: &mut R) -> Vec<usize> {
    let count = ((ratio * positions.len() as f64).round() as usize).min(positions.len());
    let mut picked: Vec<usize> = sample(rng, positions.len(), count).into_iter().map(|i| positions[i]).collect();
    picked.sort_unstable();
    picked
}

/// Tokenizes `text` for the encoder and derives both masked views.
pub fn mask_example<R: Rng + ?Sized>(
    text: &str,
    vocab: &Vocabulary,
    config: &RetroMaeConfig,
    rng: &mut R,
) -> Result<MaskedExample> {
    let opts = EncodeOptions::new(config.pooling.clone(), config.chunking.clone(), config.max_len);
    let mut encoder_input = opts.tokenize(text, vocab, rng)?;
    let content = encoder_input.content_ids();
    for p in mask_positions(&encoder_input.content_positions(), config.encoder_mask_ratio, rng) {
        encoder_input.ids[p] = MASK;
    }
    let mut decoder_input = standard_encode(&content, config.max_len)?;
    let mut targets = Vec::new();
    for p in mask_positions(&decoder_input.content_positions(), config.decoder_mask_ratio, rng) {
        targets.push((p, decoder_input.ids[p]));
        decoder_input.ids[p] = MASK;
    }
    Ok(MaskedExample { encoder_input, decoder_input, targets })
}

fn log_softmax_row(row: &[f64]) -> (Vec<f64>, f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    (row.iter().map(|x| (x - lse).exp()).collect(), lse)
}

/// Mean cross-entropy over all masked decoder positions, with gradients
/// when `grads` is given.
fn reconstruction(
    params: &RetroMaeParams,
    examples: &[MaskedExample],
    strategy: &PoolingStrategy,
    mut grads: Option<&mut RetroMaeParams>,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<f64> {
    let total: usize = examples.iter().map(|e| e.targets.len()).sum();
    if total == 0 {
        return Err(Error::NoMaskedPositions);
    }
    let model = &params.model;
    let cfg = &model.config;
    let shape = BlockShape { n_heads: cfg.n_heads, d_head: cfg.d_head };
    let theta = rope_frequencies(cfg.d_head, cfg.rope_base)?;
    let embed = &model.encoder.embed;
    let scale = 1.0 / total as f64;
    let mut loss = 0.0;
    for ex in examples {
        let (states, enc_cache) = forward_train(&ex.encoder_input, &model.encoder, cfg, reborrow(&mut dropout_rng))?;
        let (sentence, pool_cache) = pool_train(&states, &ex.encoder_input, strategy, model.latent.as_ref())?;

        let dec = &ex.decoder_input;
        if let Some(&id) = dec.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab_size: cfg.vocab_size });
        }
        let ids: Vec<usize> = dec.ids.iter().map(|&i| i as usize).collect();
        let x = embed.select(Axis(0), &ids) + &sentence;
        let rope = RopeTable::new(&theta, dec.len(), 0);
        let keep: Vec<bool> = dec.mask.iter().map(|&m| m == 1).collect();
        let (y, block_cache) = block_forward(&x, &params.decoder.block, &rope, &keep, &shape, None);
        let (h, ln_cache) = layer_norm(&y, &params.decoder.final_gain, &params.decoder.final_bias);

        let rows: Vec<usize> = ex.targets.iter().map(|&(p, _)| p).collect();
        let h_sel = h.select(Axis(0), &rows);
        let logits = h_sel.dot(&embed.t());
        let mut d_logits = Array2::zeros(logits.dim());
        for (r, &(_, target)) in ex.targets.iter().enumerate() {
            let (probs, lse) = log_softmax_row(logits.row(r).as_slice().expect("contiguous logits"));
            loss += (lse - logits[[r, target as usize]]) * scale;
            for (v, p) in probs.into_iter().enumerate() {
                d_logits[[r, v]] = p * scale;
            }
            d_logits[[r, target as usize]] -= scale;
        }

        let Some(g) = grads.as_deref_mut() else { continue };
        // tied output projection
        g.model.encoder.embed += &d_logits.t().dot(&h_sel);
        let d_h_sel = d_logits.dot(embed);
        let mut d_h = Array2::zeros(h.dim());
        for (r, &p) in rows.iter().enumerate() {
            let mut dst = d_h.row_mut(p);
            dst += &d_h_sel.row(r);
        }
        let d_y = layer_norm_backward(&d_h, &ln_cache, &params.decoder.final_gain, &mut g.decoder.final_gain, &mut g.decoder.final_bias);
        let d_x = block_backward(&d_y, &block_cache, &params.decoder.block, &rope, &shape, &mut g.decoder.block);
        for (row, &id) in d_x.rows().into_iter().zip(&ids) {
            let mut dst = g.model.encoder.embed.row_mut(id);
            dst += &row;
        }
        let d_sentence = d_x.sum_axis(Axis(0));
        let latent = match (&model.latent, &mut g.model.latent) {
            (Some(p), Some(gl)) => Some((p, gl)),
            _ => None,
        };
        let d_states = pool_backward(&d_sentence, &pool_cache, ex.encoder_input.len(), cfg.d_model, latent);
        backward(&d_states, &enc_cache, &model.encoder, cfg, &mut g.model.encoder);
    }
    Ok(loss)
}

/// Reconstruction loss of prepared examples (no dropout, no update).
pub fn reconstruction_loss(params: &RetroMaeParams, examples: &[MaskedExample], strategy: &PoolingStrategy) -> Result<f64> {
    reconstruction(params, examples, strategy, None, None)
}

/// Loss and gradients of prepared examples, without dropout.
pub fn reconstruction_loss_and_grads(
    params: &RetroMaeParams,
    examples: &[MaskedExample],
    strategy: &PoolingStrategy,
) -> Result<(f64, RetroMaeParams)> {
    let mut g = params.zeros_like();
    let loss = reconstruction(params, examples, strategy, Some(&mut g), None)?;
    Ok((loss, g))
}

/// Pretraining loop state.
pub struct RetroMae {
    pub params: RetroMaeParams,
    pub config: RetroMaeConfig,
    vocab: Vocabulary,
    optimizer: Adam,
    rng: ChaCha8Rng,
}

impl RetroMae {
    /// Wraps `model` with a freshly initialized decoder.
    pub fn new(model: Model, vocab: Vocabulary, config: RetroMaeConfig) -> Result<Self> {
        config.validate()?;
        if vocab.len() > model.config.vocab_size {
            return Err(invalid(format!(
                "vocabulary of {} exceeds model vocab_size {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let decoder = DecoderParams::init(model.config.d_model, model.config.ffn_dim, &mut rng);
        let optimizer = Adam::new(config.learning_rate, config.warmup_steps);
        Ok(Self { params: RetroMaeParams { model, decoder }, config, vocab, optimizer, rng })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn steps_taken(&self) -> usize {
        self.optimizer.steps_taken()
    }

    /// Masks `texts` with a generator seeded by `seed`; the same seed gives
    /// the same batch.
    pub fn fixed_batch(&self, texts: &[&str], seed: u64) -> Result<Vec<MaskedExample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        texts.iter().map(|t| mask_example(t, &self.vocab, &self.config, &mut rng)).collect()
    }

    pub fn eval_loss(&self, examples: &[MaskedExample]) -> Result<f64> {
        reconstruction_loss(&self.params, examples, &self.config.pooling)
    }

    /// One optimizer update on `texts`; returns the pre-update loss.
    pub fn step(&mut self, texts: &[&str]) -> Result<f64> {
        if texts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let examples = texts
            .iter()
            .map(|t| mask_example(t, &self.vocab, &self.config, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let mut g = self.params.zeros_like();
        let loss = reconstruction(&self.params, &examples, &self.config.pooling, Some(&mut g), Some(&mut self.rng))?;
        self.optimizer.update(&mut self.params, &g);
        if !self.params.all_finite() {
            return Err(Error::Diverged(self.optimizer.steps_taken()));
        }
        Ok(loss)
    }
}
