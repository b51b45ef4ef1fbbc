//! Where pooling tokens look: final-layer attention mass over normalized
//! content positions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::pooling::PoolingStrategy;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanProfile {
    pub strategy: String,
    pub trained_max_len: Option<usize>,
    /// Longest evaluated sequence, in tokens.
    pub eval_length: usize,
    pub documents: usize,
    pub bins: Vec<f64>,
}

impl SpanProfile {
    /// Mass in the bins covering `[lo, hi)` of the normalized position axis.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        let n = self.bins.len() as f64;
        self.bins
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = (*i as f64 + 0.5) / n;
                c >= lo && c < hi
            })
            .map(|(_, v)| v)
            .sum()
    }

    /// First-quarter over last-quarter mass.
    pub fn quarter_ratio(&self) -> f64 {
        self.mass(0.0, 0.25) / self.mass(0.75, 1.0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_start,bin_end,mass")?;
        let n = self.bins.len() as f64;
        for (i, v) in self.bins.iter().enumerate() {
            writeln!(w, "{},{},{v}", i as f64 / n, (i + 1) as f64 / n)?;
        }
        Ok(())
    }
}

/// Query rows whose attention defines the profile.
fn pooling_rows(seq: &TokenSequence, strategy: &PoolingStrategy) -> Result<Vec<usize>> {
    match strategy {
        PoolingStrategy::Cls => Ok(vec![0]),
        PoolingStrategy::MarkerMean { .. } => {
            if seq.marker_positions.is_empty() {
                return Err(Error::NoLandmarks);
            }
            Ok(seq.marker_positions.clone())
        }
        _ => Err(Error::NoPoolingToken),
    }
}

/// Final-layer attention (mean over heads) from the pooling tokens onto
/// content positions. Position `i` of `n` content tokens falls in bin
/// `floor(i * n_bins / n)`. Each document's histogram is normalized before
/// averaging.
pub fn attention_span_profile(
    model: &Model,
    docs: &[TokenSequence],
    strategy: &PoolingStrategy,
    n_bins: usize,
    trained_max_len: Option<usize>,
) -> Result<SpanProfile> {
    if n_bins == 0 {
        return Err(invalid("n_bins must be at least 1"));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = vec![0.0; n_bins];
    let mut eval_length = 0;
    for seq in docs {
        let rows = pooling_rows(seq, strategy)?;
        let content = seq.content_positions();
        let n = content.len();
        if n < n_bins {
            return Err(invalid(format!("document with {n} content tokens is shorter than {n_bins} bins")));
        }
        let h = model.forward(seq, true)?;
        let attn = h
            .trace
            .as_ref()
            .and_then(|t| t.final_layer_mean())
            .ok_or_else(|| invalid("model produced no attention trace"))?;
        let mut hist = vec![0.0; n_bins];
        for &r in &rows {
            for (i, &p) in content.iter().enumerate() {
                hist[i * n_bins / n] += attn[[r, p]];
            }
        }
        let sum: f64 = hist.iter().sum();
        if sum > 0.0 {
            for (t, v) in total.iter_mut().zip(&hist) {
                *t += v / sum;
            }
        }
        eval_length = eval_length.max(seq.len());
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(SpanProfile {
        strategy: strategy.to_string(),
        trained_max_len,
        eval_length,
        documents: docs.len(),
        bins: total,
    })
}
