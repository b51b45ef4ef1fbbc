use lmk_core::encoder::{attention_logits, forward, forward_at, rope_frequencies, rotate, EncoderConfig, EncoderParams};
use lmk_core::tokenizer::TokenSequence;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 12;

fn config() -> EncoderConfig {
    EncoderConfig::small(2, 8, 2, VOCAB)
}

fn random_params(config: &EncoderConfig, seed: u64) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EncoderParams::init(config, &mut rng);
    // Non-trivial norms so the oracle cannot get away with ignoring them.
    for l in &mut p.layers {
        l.ln1_gain.mapv_inplace(|_| rng.random_range(0.5..1.5));
        l.ln1_bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    p
}

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence::from_ids(ids.to_vec(), 1)
}

fn scalar_layer_norm(x: &[f64], gain: &Array1<f64>, bias: &Array1<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = (var + 1e-5).sqrt();
    x.iter().enumerate().map(|(i, v)| (v - mean) / sd * gain[i] + bias[i]).collect()
}

#[test]
fn zeroed_mixing_leaves_normalized_embeddings() {
    let c = EncoderConfig::small(1, 8, 2, VOCAB);
    let mut p = random_params(&c, 1);
    p.layers[0].w_o.fill(0.0);
    p.layers[0].w_2.fill(0.0);
    p.layers[0].b_2.fill(0.0);
    p.final_gain.mapv_inplace(|_| 1.3);
    p.final_bias.mapv_inplace(|_| -0.2);
    let ids = [0, 5, 7, 9, 1];
    let h = forward(&seq(&ids), &p, &c, false).unwrap();
    for (i, &id) in ids.iter().enumerate() {
        let row: Vec<f64> = p.embed.row(id as usize).to_vec();
        let want = scalar_layer_norm(&row, &p.final_gain, &p.final_bias);
        for (j, w) in want.iter().enumerate() {
            assert!((h.states[[i, j]] - w).abs() < 1e-12);
        }
    }
}

#[test]
fn pad_embedding_never_reaches_real_rows() {
    let c = config();
    let p = random_params(&c, 2);
    let s = seq(&[0, 6, 8, 10, 1]).padded(9);
    let before = forward(&s, &p, &c, false).unwrap();
    let mut q = p.clone();
    q.embed.row_mut(2).mapv_inplace(|v| v * 50.0 + 3.0);
    let after = forward(&s, &q, &c, false).unwrap();
    for i in 0..5 {
        assert_eq!(before.states.row(i), after.states.row(i));
    }
}

#[test]
fn padding_does_not_change_real_rows() {
    let c = config();
    let p = random_params(&c, 3);
    let a = forward(&seq(&[0, 6, 8, 10, 1]), &p, &c, false).unwrap();
    let b = forward(&seq(&[0, 6, 8, 10, 1]).padded(12), &p, &c, false).unwrap();
    for i in 0..5 {
        for j in 0..c.d_model {
            assert!((a.states[[i, j]] - b.states[[i, j]]).abs() < 1e-12);
        }
    }
}

#[test]
fn first_layer_logits_match_standalone_rotation() {
    let c = config();
    let p = random_params(&c, 4);
    let ids = [0, 5, 6, 7, 8, 9, 1];
    let theta = rope_frequencies(c.d_head, c.rope_base).unwrap();
    let l = &p.layers[0];
    let normed: Vec<Vec<f64>> =
        ids.iter().map(|&id| scalar_layer_norm(&p.embed.row(id as usize).to_vec(), &l.ln1_gain, &l.ln1_bias)).collect();
    let project = |x: &[f64], w: &Array2<f64>, head: usize| -> Vec<f64> {
        (0..c.d_head)
            .map(|j| (0..c.d_model).map(|i| x[i] * w[[i, head * c.d_head + j]]).sum())
            .collect()
    };
    for head in 0..c.n_heads {
        let got = attention_logits(&seq(&ids), &p, &c, 0, head, 0).unwrap();
        for m in 0..ids.len() {
            for n in 0..ids.len() {
                let q = project(&normed[m], &l.w_q, head);
                let k = rotate(&project(&normed[n], &l.w_k, head), n as f64 - m as f64, &theta).unwrap();
                let want = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (c.d_head as f64).sqrt();
                assert!((got[[m, n]] - want).abs() < 1e-6, "head {head} ({m},{n})");
            }
        }
    }
}

#[test]
fn shifting_positions_changes_no_logit() {
    let c = config();
    let p = random_params(&c, 5);
    let s = seq(&[0, 4, 9, 11, 3, 7, 1]);
    for layer in 0..c.layers {
        for head in 0..c.n_heads {
            let base = attention_logits(&s, &p, &c, layer, head, 0).unwrap();
            for offset in [1, 17, 500] {
                let moved = attention_logits(&s, &p, &c, layer, head, offset).unwrap();
                let diff = (&base - &moved).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
                assert!(diff <= 1e-6, "layer {layer} head {head} offset {offset}: {diff}");
            }
        }
    }
    let a = forward(&s, &p, &c, false).unwrap();
    let b = forward_at(&s, &p, &c, false, 300).unwrap();
    assert!((&a.states - &b.states).mapv(f64::abs).iter().all(|&d| d < 1e-6));
}

#[test]
fn attention_rows_sum_to_one_over_real_columns() {
    let c = config();
    let p = random_params(&c, 6);
    let s = seq(&[0, 4, 9, 11, 1]).padded(8);
    let h = forward(&s, &p, &c, true).unwrap();
    let trace = h.trace.unwrap();
    assert_eq!(trace.layers.len(), c.layers);
    for layer in &trace.layers {
        assert_eq!(layer.len(), c.n_heads);
        for probs in layer {
            assert_eq!(probs.dim(), (8, 8));
            for row in probs.rows() {
                assert!((row.iter().take(5).sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().skip(5).all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn shapes_and_errors() {
    let c = config();
    let p = random_params(&c, 7);
    assert_eq!(forward(&seq(&[0]), &p, &c, false).unwrap().states.dim(), (1, 8));
    assert_eq!(forward(&seq(&[0, 3, 1]), &p, &c, false).unwrap().states.dim(), (3, 8));
    assert!(forward(&seq(&[0, VOCAB as u32, 1]), &p, &c, false).is_err());
    let a = forward(&seq(&[0, 3, 5, 1]), &p, &c, false).unwrap();
    let b = forward(&seq(&[0, 3, 5, 1]), &p, &c, false).unwrap();
    assert_eq!(a.states, b.states);
}
