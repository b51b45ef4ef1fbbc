//! Corpus embedding and exact cosine search.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{Corpus, Hit, Run};
use crate::error::{invalid, Error, Result};
use crate::model::{EncodeOptions, Model};
use crate::pooling::EmbeddingMatrix;
use crate::tokenizer::Vocabulary;

/// Generator for text `index`; independent of batching and order.
fn text_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Embeds every text into one L2-normalized row. `batch_size` only groups
/// the work; rows are identical for every batch size. Variable chunking
/// draws from a generator keyed by `(seed, index)`.
pub fn embed_corpus<S: AsRef<str>>(
    texts: &[S],
    model: &Model,
    vocab: &Vocabulary,
    options: &EncodeOptions,
    batch_size: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if batch_size == 0 {
        return Err(invalid("batch_size must be at least 1"));
    }
    let d = model.config.d_model;
    let mut rows = Array2::zeros((texts.len(), d));
    for (b, batch) in texts.chunks(batch_size).enumerate() {
        for (i, text) in batch.iter().enumerate() {
            let index = b * batch_size + i;
            let e = model.embed_text(text.as_ref(), vocab, options, &mut text_rng(seed, index))?;
            if e.vector.len() != d {
                return Err(Error::Shape(format!("embedding of width {} for d_model {d}", e.vector.len())));
            }
            rows.row_mut(index).assign(&e.vector);
        }
    }
    Ok(EmbeddingMatrix { strategy: options.strategy.to_string(), rows })
}

/// Top-`k` rows of `docs` by dot product with `query`, ties broken by
/// ascending id. With normalized inputs the score is the cosine.
pub fn search<S: AsRef<str>>(query: ArrayView1<f64>, docs: ArrayView2<f64>, ids: &[S], k: usize) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if ids.len() != docs.nrows() {
        return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), docs.nrows())));
    }
    if query.len() != docs.ncols() {
        return Err(Error::Shape(format!("query of width {} against rows of width {}", query.len(), docs.ncols())));
    }
    let scores = docs.dot(&query);
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order.truncate(k);
    Ok(order
        .into_iter()
        .map(|i| Hit { doc_id: ids[i].as_ref().to_string(), score: scores[i] })
        .collect())
}

/// Searches every query against an embedded corpus.
pub fn search_all(queries: &Corpus, query_rows: &EmbeddingMatrix, corpus: &Corpus, doc_rows: &EmbeddingMatrix, k: usize) -> Result<Run> {
    if query_rows.rows.nrows() != queries.len() {
        return Err(Error::Shape(format!("{} query rows for {} queries", query_rows.rows.nrows(), queries.len())));
    }
    let ids = corpus.ids();
    let mut run = Run::default();
    for (q, row) in queries.records().iter().zip(query_rows.rows.rows()) {
        run.0.insert(q.id.clone(), search(row, doc_rows.rows.view(), &ids, k)?);
    }
    Ok(run)
}
