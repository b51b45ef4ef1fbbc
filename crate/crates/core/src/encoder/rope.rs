//! Rotary position embeddings.
//!
//! Coordinate pair `(2j, 2j + 1)` of a head vector at position `m` is rotated
//! by the angle `m * theta_j`, with `theta_j = base^(-2j / d_head)`.

use ndarray::Array2;

use crate::error::{invalid, Error, Result};

pub fn rope_frequencies(d_head: usize, base: f64) -> Result<Vec<f64>> {
    if d_head % 2 != 0 || d_head == 0 {
        return Err(invalid(format!("d_head {d_head} must be even and positive")));
    }
    if !(base > 0.0) {
        return Err(invalid("rope base must be positive"));
    }
    Ok((0..d_head / 2)
        .map(|j| base.powf(-(2.0 * j as f64) / d_head as f64))
        .collect())
}

/// Rotates `v` to position `m` (which may be negative).
pub fn rotate(v: &[f64], m: f64, theta: &[f64]) -> Result<Vec<f64>> {
    if v.len() != 2 * theta.len() {
        return Err(Error::Shape(format!(
            "vector has {} dims, frequencies cover {}",
            v.len(),
            2 * theta.len()
        )));
    }
    let mut out = v.to_vec();
    for (j, &t) in theta.iter().enumerate() {
        let (s, c) = (m * t).sin_cos();
        let (x0, x1) = (v[2 * j], v[2 * j + 1]);
        out[2 * j] = x0 * c - x1 * s;
        out[2 * j + 1] = x0 * s + x1 * c;
    }
    Ok(out)
}

/// Precomputed cos/sin for positions `offset..offset + len`.
#[derive(Debug, Clone)]
pub(crate) struct RopeTable {
    cos: Array2<f64>,
    sin: Array2<f64>,
}

impl RopeTable {
    pub(crate) fn new(theta: &[f64], len: usize, offset: usize) -> Self {
        let half = theta.len();
        let mut cos = Array2::zeros((len, half));
        let mut sin = Array2::zeros((len, half));
        for i in 0..len {
            let m = (i + offset) as f64;
            for (j, &t) in theta.iter().enumerate() {
                let (s, c) = (m * t).sin_cos();
                cos[[i, j]] = c;
                sin[[i, j]] = s;
            }
        }
        Self { cos, sin }
    }

    /// Rotates every head block of every row; `inverse` rotates backwards
    /// (the transpose, used by the backward pass).
    pub(crate) fn apply(&self, x: &mut Array2<f64>, n_heads: usize, d_head: usize, inverse: bool) {
        let half = d_head / 2;
        let sign = if inverse { -1.0 } else { 1.0 };
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            let c = self.cos.row(i);
            let s = self.sin.row(i);
            let row = row.as_slice_mut().expect("row-major activations");
            for h in 0..n_heads {
                let base = h * d_head;
                for j in 0..half {
                    let (cj, sj) = (c[j], sign * s[j]);
                    let x0 = row[base + 2 * j];
                    let x1 = row[base + 2 * j + 1];
                    row[base + 2 * j] = x0 * cj - x1 * sj;
                    row[base + 2 * j + 1] = x0 * sj + x1 * cj;
                }
            }
        }
    }
}
