use ndarray::{Array1, Array2};
use rand::Rng;

use super::EncoderConfig;
use crate::nn::{normal_matrix, slice1, slice1_mut, slice2, slice2_mut, ParamTensors};

/// Standard deviation of the token-embedding initialization.
pub const EMBED_INIT_STD: f64 = 0.02;

/// One pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_1: Array2<f64>,
    pub b_1: Array1<f64>,
    pub w_2: Array2<f64>,
    pub b_2: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(d_model: usize, ffn_dim: usize) -> Self {
        Self {
            ln1_gain: Array1::zeros(d_model),
            ln1_bias: Array1::zeros(d_model),
            w_q: Array2::zeros((d_model, d_model)),
            w_k: Array2::zeros((d_model, d_model)),
            w_v: Array2::zeros((d_model, d_model)),
            w_o: Array2::zeros((d_model, d_model)),
            ln2_gain: Array1::zeros(d_model),
            ln2_bias: Array1::zeros(d_model),
            w_1: Array2::zeros((d_model, ffn_dim)),
            b_1: Array1::zeros(ffn_dim),
            w_2: Array2::zeros((ffn_dim, d_model)),
            b_2: Array1::zeros(d_model),
        }
    }

    /// Linear weights ~ N(0, 1/fan_in); norms start at identity.
    pub fn init<R: Rng + ?Sized>(d_model: usize, ffn_dim: usize, rng: &mut R) -> Self {
        let sd = 1.0 / (d_model as f64).sqrt();
        let sf = 1.0 / (ffn_dim as f64).sqrt();
        Self {
            ln1_gain: Array1::ones(d_model),
            ln1_bias: Array1::zeros(d_model),
            w_q: normal_matrix(d_model, d_model, sd, rng),
            w_k: normal_matrix(d_model, d_model, sd, rng),
            w_v: normal_matrix(d_model, d_model, sd, rng),
            w_o: normal_matrix(d_model, d_model, sd, rng),
            ln2_gain: Array1::ones(d_model),
            ln2_bias: Array1::zeros(d_model),
            w_1: normal_matrix(d_model, ffn_dim, sd, rng),
            b_1: Array1::zeros(ffn_dim),
            w_2: normal_matrix(ffn_dim, d_model, sf, rng),
            b_2: Array1::zeros(d_model),
        }
    }

    pub(crate) fn named(&self, prefix: &str) -> Vec<(String, &[f64])> {
        vec![
            (format!("{prefix}.ln1_gain"), slice1(&self.ln1_gain)),
            (format!("{prefix}.ln1_bias"), slice1(&self.ln1_bias)),
            (format!("{prefix}.w_q"), slice2(&self.w_q)),
            (format!("{prefix}.w_k"), slice2(&self.w_k)),
            (format!("{prefix}.w_v"), slice2(&self.w_v)),
            (format!("{prefix}.w_o"), slice2(&self.w_o)),
            (format!("{prefix}.ln2_gain"), slice1(&self.ln2_gain)),
            (format!("{prefix}.ln2_bias"), slice1(&self.ln2_bias)),
            (format!("{prefix}.w_1"), slice2(&self.w_1)),
            (format!("{prefix}.b_1"), slice1(&self.b_1)),
            (format!("{prefix}.w_2"), slice2(&self.w_2)),
            (format!("{prefix}.b_2"), slice1(&self.b_2)),
        ]
    }

    pub(crate) fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut [f64])> {
        vec![
            (format!("{prefix}.ln1_gain"), slice1_mut(&mut self.ln1_gain)),
            (format!("{prefix}.ln1_bias"), slice1_mut(&mut self.ln1_bias)),
            (format!("{prefix}.w_q"), slice2_mut(&mut self.w_q)),
            (format!("{prefix}.w_k"), slice2_mut(&mut self.w_k)),
            (format!("{prefix}.w_v"), slice2_mut(&mut self.w_v)),
            (format!("{prefix}.w_o"), slice2_mut(&mut self.w_o)),
            (format!("{prefix}.ln2_gain"), slice1_mut(&mut self.ln2_gain)),
            (format!("{prefix}.ln2_bias"), slice1_mut(&mut self.ln2_bias)),
            (format!("{prefix}.w_1"), slice2_mut(&mut self.w_1)),
            (format!("{prefix}.b_1"), slice1_mut(&mut self.b_1)),
            (format!("{prefix}.w_2"), slice2_mut(&mut self.w_2)),
            (format!("{prefix}.b_2"), slice1_mut(&mut self.b_2)),
        ]
    }
}

/// All learnable tensors of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embed: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
}

impl EncoderParams {
    pub fn zeros(config: &EncoderConfig) -> Self {
        Self {
            embed: Array2::zeros((config.vocab_size, config.d_model)),
            layers: (0..config.layers)
                .map(|_| LayerParams::zeros(config.d_model, config.ffn_dim))
                .collect(),
            final_gain: Array1::zeros(config.d_model),
            final_bias: Array1::zeros(config.d_model),
        }
    }

    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        Self {
            embed: normal_matrix(config.vocab_size, config.d_model, EMBED_INIT_STD, rng),
            layers: (0..config.layers)
                .map(|_| LayerParams::init(config.d_model, config.ffn_dim, rng))
                .collect(),
            final_gain: Array1::ones(config.d_model),
            final_bias: Array1::zeros(config.d_model),
        }
    }

    pub fn matches(&self, config: &EncoderConfig) -> bool {
        let d = config.d_model;
        self.embed.dim() == (config.vocab_size, d)
            && self.layers.len() == config.layers
            && self.final_gain.len() == d
            && self.final_bias.len() == d
            && self.layers.iter().all(|l| {
                l.w_q.dim() == (d, d)
                    && l.w_k.dim() == (d, d)
                    && l.w_v.dim() == (d, d)
                    && l.w_o.dim() == (d, d)
                    && l.w_1.dim() == (d, config.ffn_dim)
                    && l.w_2.dim() == (config.ffn_dim, d)
                    && l.b_1.len() == config.ffn_dim
                    && l.ln1_gain.len() == d
            })
    }
}

impl ParamTensors for EncoderParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![("embed".to_string(), slice2(&self.embed))];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named(&format!("layers.{i}")));
        }
        out.push(("final_gain".into(), slice1(&self.final_gain)));
        out.push(("final_bias".into(), slice1(&self.final_bias)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![("embed".to_string(), slice2_mut(&mut self.embed))];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.named_mut(&format!("layers.{i}")));
        }
        out.push(("final_gain".into(), slice1_mut(&mut self.final_gain)));
        out.push(("final_bias".into(), slice1_mut(&mut self.final_bias)));
        out
    }
}
