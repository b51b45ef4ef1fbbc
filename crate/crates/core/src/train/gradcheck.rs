//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trainer::{contrastive_loss, contrastive_loss_and_grads, EncodedBatch};
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::nn::ParamTensors;
use crate::pooling::PoolingStrategy;

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is (near) zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` on up to
/// `samples` random coordinates of every tensor of `params`.
pub fn check_gradients<P, F, R>(
    params: &P,
    analytic: &P,
    loss: F,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    P: ParamTensors + Clone,
    F: Fn(&P) -> Result<f64>,
    R: Rng + ?Sized,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(invalid(format!("finite-difference step {eps} outside [1e-6, 1e-4]")));
    }
    let grads = analytic.tensors();
    let shapes: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let mut probe = params.clone();
    let mut per_tensor = Vec::with_capacity(shapes.len());
    let mut coordinates = 0;
    for (k, (name, len)) in shapes.iter().enumerate() {
        let picks: Vec<usize> = if *len <= samples {
            (0..*len).collect()
        } else {
            let mut v = sample(rng, *len, samples).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        for i in picks {
            let orig = probe.tensors()[k].1[i];
            probe.tensors_mut()[k].1[i] = orig + eps;
            let plus = loss(&probe)?;
            probe.tensors_mut()[k].1[i] = orig - eps;
            let minus = loss(&probe)?;
            probe.tensors_mut()[k].1[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grads[k].1[i], numeric));
            coordinates += 1;
        }
        per_tensor.push((name.clone(), worst));
    }
    let max_rel_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, per_tensor, coordinates })
}

/// Gradient check of the contrastive loss for a tiny model; every tensor is
/// probed on at least `samples` coordinates (all of them when smaller).
pub fn grad_check(
    model: &Model,
    batch: &EncodedBatch,
    strategy: &PoolingStrategy,
    tau: f64,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if model.config.d_model > 16 {
        return Err(invalid("gradient checks are meant for models with d_model <= 16"));
    }
    if model.config.dropout > 0.0 {
        return Err(invalid("gradient checks require dropout 0"));
    }
    let analytic = contrastive_loss_and_grads(model, batch, strategy, tau, None)?.grads;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_gradients(model, &analytic, |m| contrastive_loss(m, batch, strategy, tau), eps, samples.max(200), &mut rng)
}
