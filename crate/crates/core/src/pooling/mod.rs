//! Pooling strategies mapping hidden states to one embedding per text.

mod io;
mod latent;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use io::EmbeddingMatrix;
pub(crate) use latent::{latent_backward, latent_forward, LatentCache};
pub use latent::{LatentAttentionParams, LatentConfig};

use crate::encoder::HiddenStates;
use crate::error::{invalid, Error, Result};
use crate::tokenizer::{is_structural, TokenId, TokenSequence, CLS, LMK};

/// Which special token a marker-mean pooling averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    /// Landmark tokens (the SEP id).
    Landmark,
    /// CLS tokens inserted at inference time (MultiCLS).
    Cls,
}

impl Marker {
    pub fn id(self) -> TokenId {
        match self {
            Marker::Landmark => LMK,
            Marker::Cls => CLS,
        }
    }
}

/// Serialized as its short name (`cls`, `mean`, `mean@4`, `mean@4+1`, `lmk`,
/// `multicls`, `latent`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PoolingStrategy {
    Cls,
    Mean,
    /// Mean over every `k`-th content token, starting at content index `phase`.
    MeanAtK { k: usize, phase: usize },
    MarkerMean {
        marker: Marker,
    },
    LatentAttention,
}

impl PoolingStrategy {
    pub const LMK: PoolingStrategy = PoolingStrategy::MarkerMean { marker: Marker::Landmark };
    pub const MULTI_CLS: PoolingStrategy = PoolingStrategy::MarkerMean { marker: Marker::Cls };

    /// Marker id to insert during tokenization, if the strategy needs one.
    pub fn marker(&self) -> Option<TokenId> {
        match self {
            PoolingStrategy::MarkerMean { marker } => Some(marker.id()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PoolingStrategy::MeanAtK { k, .. } if *k < 1 => Err(invalid("Mean@k needs k >= 1")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolingStrategy::Cls => write!(f, "cls"),
            PoolingStrategy::Mean => write!(f, "mean"),
            PoolingStrategy::MeanAtK { k, phase: 0 } => write!(f, "mean@{k}"),
            PoolingStrategy::MeanAtK { k, phase } => write!(f, "mean@{k}+{phase}"),
            PoolingStrategy::MarkerMean { marker: Marker::Landmark } => write!(f, "lmk"),
            PoolingStrategy::MarkerMean { marker: Marker::Cls } => write!(f, "multicls"),
            PoolingStrategy::LatentAttention => write!(f, "latent"),
        }
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cls" => PoolingStrategy::Cls,
            "mean" => PoolingStrategy::Mean,
            "lmk" => PoolingStrategy::LMK,
            "multicls" => PoolingStrategy::MULTI_CLS,
            "latent" => PoolingStrategy::LatentAttention,
            other => {
                let rest = other
                    .strip_prefix("mean@")
                    .ok_or_else(|| invalid(format!("unknown pooling strategy {other:?}")))?;
                let (k, phase) = rest.split_once('+').unwrap_or((rest, "0"));
                let parse = |v: &str| v.parse::<usize>().map_err(|_| invalid(format!("bad Mean@k spec {other:?}")));
                let strategy = PoolingStrategy::MeanAtK { k: parse(k)?, phase: parse(phase)? };
                strategy.validate()?;
                strategy
            }
        })
    }
}

impl TryFrom<String> for PoolingStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PoolingStrategy> for String {
    fn from(p: PoolingStrategy) -> String {
        p.to_string()
    }
}

/// One fixed-size vector per text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Array1<f64>,
    pub strategy: PoolingStrategy,
    pub normalized: bool,
}

impl Embedding {
    pub fn new(vector: Array1<f64>, strategy: PoolingStrategy) -> Self {
        Self { vector, strategy, normalized: false }
    }

    /// L2-normalizes in place; a zero vector is left unchanged.
    pub fn normalize(mut self) -> Self {
        let n = self.vector.dot(&self.vector).sqrt();
        if n > 0.0 {
            self.vector /= n;
        }
        self.normalized = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

fn check_rows(h: &HiddenStates, seq: &TokenSequence) -> Result<()> {
    if h.is_empty() {
        return Err(Error::EmptyStates);
    }
    if h.len() != seq.len() || seq.mask.len() != seq.len() {
        return Err(Error::Shape(format!("{} hidden rows for {} tokens", h.len(), seq.len())));
    }
    Ok(())
}

/// Rows a mean-type strategy averages, each with weight 1/|rows|.
pub(crate) fn selected_rows(strategy: &PoolingStrategy, seq: &TokenSequence) -> Result<Vec<usize>> {
    strategy.validate()?;
    let unmasked = |i: &usize| seq.mask[*i] == 1;
    let rows: Vec<usize> = match strategy {
        PoolingStrategy::Cls => {
            if seq.is_empty() {
                return Err(Error::EmptyStates);
            }
            vec![0]
        }
        PoolingStrategy::Mean | PoolingStrategy::LatentAttention => (0..seq.len()).filter(unmasked).collect(),
        PoolingStrategy::MeanAtK { k, phase } => (0..seq.len())
            .filter(|&i| seq.mask[i] == 1 && !is_structural(seq.ids[i]))
            .enumerate()
            .filter(|(c, _)| *c >= *phase && (c - phase) % k == 0)
            .map(|(_, i)| i)
            .collect(),
        PoolingStrategy::MarkerMean { marker } => {
            let id = marker.id();
            (0..seq.len()).filter(|&i| seq.ids[i] == id && seq.mask[i] == 1).collect()
        }
    };
    if rows.is_empty() {
        return Err(match strategy {
            PoolingStrategy::MarkerMean { .. } => Error::NoLandmarks,
            PoolingStrategy::MeanAtK { k, .. } => Error::NoStrideRows(*k),
            _ => Error::NoUnmaskedRows,
        });
    }
    Ok(rows)
}

fn mean_of_rows(states: &Array2<f64>, rows: &[usize]) -> Array1<f64> {
    let mut acc = Array1::zeros(states.ncols());
    for &r in rows {
        acc += &states.row(r);
    }
    acc / rows.len() as f64
}

/// CLS pooling: row 0.
pub fn pool_cls(h: &HiddenStates) -> Result<Embedding> {
    if h.is_empty() {
        return Err(Error::EmptyStates);
    }
    Ok(Embedding::new(h.states.row(0).to_owned(), PoolingStrategy::Cls))
}

/// Mean over all unmasked rows, specials included.
pub fn pool_mean(h: &HiddenStates, seq: &TokenSequence) -> Result<Embedding> {
    check_rows(h, seq)?;
    let rows = selected_rows(&PoolingStrategy::Mean, seq)?;
    Ok(Embedding::new(mean_of_rows(&h.states, &rows), PoolingStrategy::Mean))
}

/// Mean over rows holding `marker` with mask 1. With the landmark id this is
/// LMK pooling; with CLS it is MultiCLS (the leading CLS included).
pub fn pool_marker_mean(h: &HiddenStates, seq: &TokenSequence, marker: Marker) -> Result<Embedding> {
    check_rows(h, seq)?;
    let strategy = PoolingStrategy::MarkerMean { marker };
    let rows = selected_rows(&strategy, seq)?;
    Ok(Embedding::new(mean_of_rows(&h.states, &rows), strategy))
}

/// Mean over every `k`-th unmasked content token (CLS and markers skipped).
pub fn pool_mean_at_k(h: &HiddenStates, seq: &TokenSequence, k: usize, phase: usize) -> Result<Embedding> {
    check_rows(h, seq)?;
    let strategy = PoolingStrategy::MeanAtK { k, phase };
    let rows = selected_rows(&strategy, seq)?;
    Ok(Embedding::new(mean_of_rows(&h.states, &rows), strategy))
}

pub fn pool_latent_attention(
    h: &HiddenStates,
    seq: &TokenSequence,
    params: &LatentAttentionParams,
) -> Result<Embedding> {
    check_rows(h, seq)?;
    let rows = selected_rows(&PoolingStrategy::LatentAttention, seq)?;
    let (_, out, _) = latent_forward(&h.states, &rows, params)?;
    Ok(Embedding::new(out, PoolingStrategy::LatentAttention))
}

/// Dispatches on `strategy`; latent attention requires `latent`.
pub fn pool(
    h: &HiddenStates,
    seq: &TokenSequence,
    strategy: &PoolingStrategy,
    latent: Option<&LatentAttentionParams>,
) -> Result<Embedding> {
    match strategy {
        PoolingStrategy::Cls => pool_cls(h),
        PoolingStrategy::Mean => pool_mean(h, seq),
        PoolingStrategy::MeanAtK { k, phase } => pool_mean_at_k(h, seq, *k, *phase),
        PoolingStrategy::MarkerMean { marker } => pool_marker_mean(h, seq, *marker),
        PoolingStrategy::LatentAttention => {
            let params = latent.ok_or_else(|| invalid("latent attention pooling needs a latent head"))?;
            pool_latent_attention(h, seq, params)
        }
    }
}

pub(crate) enum PoolCache {
    Rows(Vec<usize>),
    Latent(LatentCache),
}

/// Pooling with a cache for [`pool_backward`].
pub(crate) fn pool_train(
    states: &Array2<f64>,
    seq: &TokenSequence,
    strategy: &PoolingStrategy,
    latent: Option<&LatentAttentionParams>,
) -> Result<(Array1<f64>, PoolCache)> {
    let rows = selected_rows(strategy, seq)?;
    if let PoolingStrategy::LatentAttention = strategy {
        let params = latent.ok_or_else(|| invalid("latent attention pooling needs a latent head"))?;
        let (_, out, cache) = latent_forward(states, &rows, params)?;
        return Ok((out, PoolCache::Latent(cache)));
    }
    Ok((mean_of_rows(states, &rows), PoolCache::Rows(rows)))
}

/// dL/d states for a pooled-output gradient `d_out`.
pub(crate) fn pool_backward(
    d_out: &Array1<f64>,
    cache: &PoolCache,
    seq_len: usize,
    d_model: usize,
    latent: Option<(&LatentAttentionParams, &mut LatentAttentionParams)>,
) -> Array2<f64> {
    match cache {
        PoolCache::Rows(rows) => {
            let mut d = Array2::zeros((seq_len, d_model));
            let w = 1.0 / rows.len() as f64;
            for &r in rows {
                d.row_mut(r).scaled_add(w, d_out);
            }
            d
        }
        PoolCache::Latent(c) => {
            let (p, g) = latent.expect("latent cache implies a latent head");
            latent_backward(d_out, c, p, g, seq_len)
        }
    }
}
