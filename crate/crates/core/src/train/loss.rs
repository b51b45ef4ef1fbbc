use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, Error, Result};

/// `Q D^T` for row-normalized embeddings: cosine similarities.
pub fn similarity_matrix(queries: ArrayView2<f64>, docs: ArrayView2<f64>) -> Result<Array2<f64>> {
    if queries.ncols() != docs.ncols() {
        return Err(Error::Shape(format!(
            "query dim {} != document dim {}",
            queries.ncols(),
            docs.ncols()
        )));
    }
    Ok(queries.dot(&docs.t()))
}

/// InfoNCE over rows of `sims`: mean of `-log softmax(sims / tau)` at each
/// row's positive column. Returns the loss and dL/d sims.
pub fn infonce_loss(sims: &Array2<f64>, positives: &[usize], tau: f64) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("temperature must be positive"));
    }
    let (n, m) = sims.dim();
    if positives.len() != n {
        return Err(Error::Shape(format!("{} positives for {n} rows", positives.len())));
    }
    if n == 0 {
        return Err(invalid("no queries"));
    }
    if let Some(&p) = positives.iter().find(|&&p| p >= m) {
        return Err(invalid(format!("positive column {p} out of {m}")));
    }
    if let Some(((row, col), _)) = sims.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row, col });
    }
    let mut grad = Array2::zeros((n, m));
    let mut total = 0.0;
    for (i, &pos) in positives.iter().enumerate() {
        let row = sims.row(i);
        let (argmax, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        let scaled: Vec<f64> = row.iter().map(|&s| (s - max) / tau).collect();
        // the max term is exactly 1; ln_1p keeps tiny tails
        let rest: f64 = scaled
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != argmax)
            .map(|(_, z)| z.exp())
            .sum();
        let log_sum = rest.ln_1p();
        total += log_sum - scaled[pos];
        for (j, z) in scaled.iter().enumerate() {
            let p = (z - log_sum).exp();
            let target = if j == pos { 1.0 } else { 0.0 };
            grad[[i, j]] = (p - target) / (tau * n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

/// 1-based rank of each row's positive (ties count in its favor).
pub fn positive_ranks(sims: &Array2<f64>, positives: &[usize]) -> Vec<usize> {
    positives
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = sims[[i, p]];
            1 + sims.row(i).iter().filter(|&&v| v > s).count()
        })
        .collect()
}
