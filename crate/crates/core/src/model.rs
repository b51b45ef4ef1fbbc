//! Encoder plus optional latent-attention head, with the text-to-embedding
//! pipeline and the binary checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! b"LMKENC01"
//! u64 layers, d_model, n_heads, d_head, ffn_dim, vocab_size
//! f64 rope_base, dropout
//! u64 has_latent; if 1: u64 latents, latent_dim, head_dim, ffn_dim
//! f64 tensors, row-major, in `ParamTensors::tensors` order:
//!   embed, per layer [ln1_gain, ln1_bias, w_q, w_k, w_v, w_o, ln2_gain,
//!   ln2_bias, w_1, b_1, w_2, b_2], final_gain, final_bias, then the latent
//!   head [latents, w_q, w_k, w_v, ln1_gain, ln1_bias, ln2_gain, ln2_bias,
//!   w_1, b_1, w_2, b_2, w_out]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{forward, EncoderConfig, EncoderParams, HiddenStates};
use crate::error::{invalid, Error, Result};
use crate::nn::ParamTensors;
use crate::pooling::{pool, Embedding, LatentAttentionParams, LatentConfig, PoolingStrategy};
use crate::tokenizer::{landmark_tokenize, standard_tokenize, ChunkingStrategy, TokenSequence, Vocabulary};

const MAGIC: &[u8; 8] = b"LMKENC01";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub encoder: EncoderParams,
    pub latent: Option<LatentAttentionParams>,
}

/// How texts are turned into token sequences for one pooling strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub strategy: PoolingStrategy,
    #[serde(default)]
    pub chunking: ChunkingStrategy,
    pub max_len: usize,
}

impl EncodeOptions {
    pub fn new(strategy: PoolingStrategy, chunking: ChunkingStrategy, max_len: usize) -> Self {
        Self { strategy, chunking, max_len }
    }

    /// Landmark tokenization for marker strategies, `[CLS] .. [SEP]` otherwise.
    pub fn tokenize<R: Rng + ?Sized>(&self, text: &str, vocab: &Vocabulary, rng: &mut R) -> Result<TokenSequence> {
        match self.strategy.marker() {
            Some(marker) => landmark_tokenize(text, vocab, &self.chunking, self.max_len, marker, rng),
            None => standard_tokenize(text, vocab, self.max_len),
        }
    }
}

impl Model {
    /// Random initialization; a latent head is created when `latent` is set.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, latent: Option<&LatentConfig>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderParams::init(config, rng);
        let latent = match latent {
            Some(c) => {
                c.validate()?;
                Some(LatentAttentionParams::init(config.d_model, c, rng))
            }
            None => None,
        };
        Ok(Self { config: config.clone(), encoder, latent })
    }

    /// Same layout as `self`, all zeros. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: EncoderParams::zeros(&self.config),
            latent: self
                .latent
                .as_ref()
                .map(|l| LatentAttentionParams::zeros(self.config.d_model, &l.config())),
        }
    }

    pub fn forward(&self, seq: &TokenSequence, trace: bool) -> Result<HiddenStates> {
        forward(seq, &self.encoder, &self.config, trace)
    }

    /// Pooled, L2-normalized embedding of an already tokenized sequence.
    pub fn embed_sequence(&self, seq: &TokenSequence, strategy: &PoolingStrategy) -> Result<Embedding> {
        let h = self.forward(seq, false)?;
        Ok(pool(&h, seq, strategy, self.latent.as_ref())?.normalize())
    }

    pub fn embed_text<R: Rng + ?Sized>(
        &self,
        text: &str,
        vocab: &Vocabulary,
        options: &EncodeOptions,
        rng: &mut R,
    ) -> Result<Embedding> {
        let seq = options.tokenize(text, vocab, rng)?;
        self.embed_sequence(&seq, &options.strategy)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        for v in [c.layers, c.d_model, c.n_heads, c.d_head, c.ffn_dim, c.vocab_size] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&c.rope_base.to_le_bytes())?;
        w.write_all(&c.dropout.to_le_bytes())?;
        match &self.latent {
            Some(l) => {
                let lc = l.config();
                w.write_all(&1u64.to_le_bytes())?;
                for v in [lc.latents, lc.latent_dim, lc.head_dim, lc.ffn_dim] {
                    w.write_all(&(v as u64).to_le_bytes())?;
                }
            }
            None => w.write_all(&0u64.to_le_bytes())?,
        }
        for (_, t) in self.tensors() {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an encoder checkpoint".into()));
        }
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let mut ints = [0usize; 6];
        for v in ints.iter_mut() {
            *v = u64::from_le_bytes(next(&mut r)?) as usize;
        }
        let rope_base = f64::from_le_bytes(next(&mut r)?);
        let dropout = f64::from_le_bytes(next(&mut r)?);
        let config = EncoderConfig {
            layers: ints[0],
            d_model: ints[1],
            n_heads: ints[2],
            d_head: ints[3],
            ffn_dim: ints[4],
            vocab_size: ints[5],
            rope_base,
            dropout,
        };
        config.validate()?;
        let has_latent = u64::from_le_bytes(next(&mut r)?);
        let latent = match has_latent {
            0 => None,
            1 => {
                let mut l = [0usize; 4];
                for v in l.iter_mut() {
                    *v = u64::from_le_bytes(next(&mut r)?) as usize;
                }
                let lc = LatentConfig { latents: l[0], latent_dim: l[1], head_dim: l[2], ffn_dim: l[3] };
                lc.validate()?;
                Some(LatentAttentionParams::zeros(config.d_model, &lc))
            }
            other => return Err(Error::Format(format!("bad latent flag {other}"))),
        };
        let mut model = Self { encoder: EncoderParams::zeros(&config), config, latent };
        for (_, t) in model.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(next(&mut r)?);
            }
        }
        if !model.all_finite() {
            return Err(invalid("checkpoint contains non-finite values"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl ParamTensors for Model {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = self.encoder.tensors();
        if let Some(l) = &self.latent {
            out.extend(l.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.encoder.tensors_mut();
        if let Some(l) = &mut self.latent {
            out.extend(l.tensors_mut());
        }
        out
    }
}
