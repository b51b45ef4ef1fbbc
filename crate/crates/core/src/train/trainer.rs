use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{LossReport, TrainingConfig, TripletBatch};
use super::loss::{infonce_loss, positive_ranks, similarity_matrix};
use super::optim::Adam;
use crate::encoder::{backward, forward_train};
use crate::error::{invalid, Error, Result};
use crate::model::{EncodeOptions, Model};
use crate::nn::{reborrow, ParamTensors};
use crate::pooling::{pool_backward, pool_train, PoolingStrategy};
use crate::tokenizer::{TokenSequence, Vocabulary};

/// A tokenized batch: queries, candidate documents and positive columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub queries: Vec<TokenSequence>,
    pub docs: Vec<TokenSequence>,
    pub positives: Vec<usize>,
}

impl EncodedBatch {
    /// Tokenizes every text; variable granularity is drawn independently
    /// per text.
    pub fn encode<R: rand::Rng + ?Sized>(
        batch: &TripletBatch,
        config: &TrainingConfig,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        batch.validate()?;
        let q_opts = EncodeOptions::new(config.pooling.clone(), config.chunking.clone(), config.query_max_len);
        let d_opts = EncodeOptions::new(config.pooling.clone(), config.chunking.clone(), config.doc_max_len);
        let queries = batch
            .triplets
            .iter()
            .map(|t| q_opts.tokenize(&t.query, vocab, rng))
            .collect::<Result<Vec<_>>>()?;
        let (doc_texts, positives) = batch.candidates();
        let docs = doc_texts
            .iter()
            .map(|d| d_opts.tokenize(d, vocab, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { queries, docs, positives })
    }
}

fn normalize(v: &Array1<f64>) -> (Array1<f64>, f64) {
    let n = v.dot(v).sqrt().max(1e-12);
    (v / n, n)
}

fn stack(rows: &[Array1<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut m = Array2::zeros((rows.len(), d));
    for (mut dst, r) in m.rows_mut().into_iter().zip(rows) {
        dst.assign(r);
    }
    m
}

/// InfoNCE loss of `batch` under `model` (forward only).
pub fn contrastive_loss(model: &Model, batch: &EncodedBatch, strategy: &PoolingStrategy, tau: f64) -> Result<f64> {
    let embed = |seqs: &[TokenSequence]| -> Result<Array2<f64>> {
        let rows = seqs
            .iter()
            .map(|s| model.embed_sequence(s, strategy).map(|e| e.vector))
            .collect::<Result<Vec<_>>>()?;
        Ok(stack(&rows))
    };
    let q = embed(&batch.queries)?;
    let d = embed(&batch.docs)?;
    let sims = similarity_matrix(q.view(), d.view())?;
    Ok(infonce_loss(&sims, &batch.positives, tau)?.0)
}

pub(crate) struct Outcome {
    pub loss: f64,
    pub ranks: Vec<usize>,
    pub grads: Model,
}

/// InfoNCE loss and gradients for every learnable tensor.
pub(crate) fn contrastive_loss_and_grads(
    model: &Model,
    batch: &EncodedBatch,
    strategy: &PoolingStrategy,
    tau: f64,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Outcome> {
    if matches!(strategy, PoolingStrategy::LatentAttention) && model.latent.is_none() {
        return Err(invalid("latent attention pooling needs a latent head"));
    }
    let seqs: Vec<&TokenSequence> = batch.queries.iter().chain(&batch.docs).collect();
    let mut caches = Vec::with_capacity(seqs.len());
    let mut units = Vec::with_capacity(seqs.len());
    for seq in &seqs {
        let (states, enc_cache) = forward_train(seq, &model.encoder, &model.config, reborrow(&mut dropout_rng))?;
        let (pooled, pool_cache) = pool_train(&states, seq, strategy, model.latent.as_ref())?;
        let (unit, norm) = normalize(&pooled);
        units.push(unit);
        caches.push((enc_cache, pool_cache, norm));
    }
    let nq = batch.queries.len();
    let q = stack(&units[..nq]);
    let d = stack(&units[nq..]);
    let sims = similarity_matrix(q.view(), d.view())?;
    let (loss, d_sims) = infonce_loss(&sims, &batch.positives, tau)?;
    let ranks = positive_ranks(&sims, &batch.positives);

    let d_q = d_sims.dot(&d);
    let d_d = d_sims.t().dot(&q);
    let mut grads = model.zeros_like();
    for (i, seq) in seqs.iter().enumerate() {
        let d_unit = if i < nq { d_q.row(i).to_owned() } else { d_d.row(i - nq).to_owned() };
        let (enc_cache, pool_cache, norm) = &caches[i];
        let unit = &units[i];
        let d_pooled = (&d_unit - &(unit * unit.dot(&d_unit))) / *norm;
        let latent = match (&model.latent, &mut grads.latent) {
            (Some(p), Some(g)) => Some((p, g)),
            _ => None,
        };
        let d_states = pool_backward(&d_pooled, pool_cache, seq.len(), model.config.d_model, latent);
        backward(&d_states, enc_cache, &model.encoder, &model.config, &mut grads.encoder);
    }
    Ok(Outcome { loss, ranks, grads })
}

/// Contrastive trainer: one bi-encoder shared by queries and documents.
pub struct Trainer {
    pub model: Model,
    pub config: TrainingConfig,
    vocab: Vocabulary,
    optimizer: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, vocab: Vocabulary, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if vocab.len() > model.config.vocab_size {
            return Err(invalid(format!(
                "vocabulary of {} exceeds model vocab_size {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        let optimizer = Adam::new(config.learning_rate, config.warmup_steps);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { model, config, vocab, optimizer, rng })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn steps_taken(&self) -> usize {
        self.optimizer.steps_taken()
    }

    /// One Adam update on `batch`. In-batch documents of other queries act
    /// as extra negatives.
    pub fn train_step(&mut self, batch: &TripletBatch) -> Result<LossReport> {
        let encoded = EncodedBatch::encode(batch, &self.config, &self.vocab, &mut self.rng)?;
        let out = contrastive_loss_and_grads(
            &self.model,
            &encoded,
            &self.config.pooling,
            self.config.temperature,
            Some(&mut self.rng),
        )?;
        let grad_norm = out.grads.global_norm();
        let learning_rate = self.optimizer.update(&mut self.model, &out.grads);
        if !self.model.all_finite() {
            return Err(Error::Diverged(self.optimizer.steps_taken()));
        }
        Ok(LossReport {
            step: self.optimizer.steps_taken(),
            loss: out.loss,
            ranks: out.ranks,
            grad_norm,
            learning_rate,
        })
    }
}
