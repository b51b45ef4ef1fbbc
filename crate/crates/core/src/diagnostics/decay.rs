//! RoPE long-term decay and landmark token overhead.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::encoder::rope_frequencies;
use crate::error::{invalid, Result};

/// `q^T R_d k` for `q = k = 1` and relative distances `0..=max_dist`,
/// i.e. `2 * sum_j cos(d * theta_j)`.
pub fn rope_decay_curve(base: f64, d_head: usize, max_dist: usize) -> Result<Vec<f64>> {
    let theta = rope_frequencies(d_head, base)?;
    Ok((0..=max_dist)
        .map(|d| 2.0 * theta.iter().map(|t| (d as f64 * t).cos()).sum::<f64>())
        .collect())
}

pub fn write_curve_csv<W: Write>(curve: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "distance,value")?;
    for (d, v) in curve.iter().enumerate() {
        writeln!(w, "{d},{v}")?;
    }
    Ok(())
}

/// Special tokens added by landmark tokenization of `n` content tokens at
/// fixed granularity `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overhead {
    pub markers: usize,
    pub cls: usize,
}

pub fn lmk_overhead(n_content: usize, granularity: usize) -> Result<Overhead> {
    if granularity == 0 {
        return Err(invalid("granularity must be at least 1"));
    }
    Ok(Overhead { markers: n_content.div_ceil(granularity).max(1), cls: 1 })
}
