//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use lmk_core::diagnostics::{
    attention_span_profile, content_for_budget, directional_hits, rope_decay_curve,
    synthetic_longctx_suite, wilson_interval, DirectionalConfig, LongCtxConfig, ModelEmbedder, PlantedKeyConfig,
    PlantedKeyGenerator, TextEmbedder, Z_95,
};
use lmk_core::encoder::{rope_frequencies, rotate, EncoderConfig, HiddenStates};
use lmk_core::eval::{evaluate, ndcg_at_k, Hit, Qrels, Run};
use lmk_core::model::EncodeOptions;
use lmk_core::pooling::{pool, LatentAttentionParams, LatentConfig, PoolingStrategy};
use lmk_core::tokenizer::{
    landmark_encode, landmark_tokenize, sentence_boundaries, ChunkingStrategy, Granularity, TokenId, TokenSequence,
    Vocabulary, CLS, LMK, PAD, UNLIMITED,
};
use lmk_core::train::{
    grad_check, infonce_loss, EncodedBatch, RetroMae, RetroMaeConfig, Trainer, TrainingConfig, Triplet, TripletBatch,
};
use lmk_core::Model;
use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed <= limit, || format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 1. tokenization algebra

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let words = rng.random_range(0..400);
    let mut out = Vec::with_capacity(words);
    for _ in 0..words {
        let w = if rng.random_bool(0.1) { format!("oov{}", rng.random_range(0..50)) } else { format!("w{}", rng.random_range(0..60)) };
        out.push(w);
        if rng.random_bool(0.08) {
            out.push([".", "!", "?"].choose(rng).unwrap().to_string());
        }
    }
    out.join(" ")
}

fn random_chunking(rng: &mut ChaCha8Rng) -> ChunkingStrategy {
    match rng.random_range(0..3) {
        0 => ChunkingStrategy::Fixed { granularity: rng.random_range(1..=40) },
        1 => ChunkingStrategy::Variable { granularities: (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=64)).collect() },
        _ => ChunkingStrategy::Sentence,
    }
}

fn tokenization_algebra() -> Outcome {
    let start = Instant::now();
    let words: Vec<String> = (0..60).map(|i| format!("w{i}")).chain([".", "!", "?"].map(String::from)).collect();
    let vocab = Vocabulary::from_words(words.iter().map(String::as_str));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0;
    for case in 0..1000 {
        let text = random_text(&mut rng);
        let chunking = random_chunking(&mut rng);
        let max_len = if rng.random_bool(0.2) { UNLIMITED } else { rng.random_range(2..=300) };
        let marker = if rng.random_bool(0.8) { LMK } else { CLS };
        let seed = rng.random::<u64>();
        let seq = landmark_tokenize(&text, &vocab, &chunking, max_len, marker, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(|e| format!("case {case}: {e}"))?;
        let again = landmark_tokenize(&text, &vocab, &chunking, max_len, marker, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        check(seq == again, || format!("case {case}: not deterministic"))?;

        let full = vocab.encode(&text);
        let n = seq.content_length;
        let is_marker: Vec<bool> = (0..seq.len()).map(|i| seq.marker_positions.contains(&i)).collect();
        let stripped: Vec<TokenId> = (1..seq.len()).filter(|&i| !is_marker[i]).map(|i| seq.ids[i]).collect();
        check(seq.ids[0] == CLS, || format!("case {case}: no leading CLS"))?;
        check(stripped == full[..n], || format!("case {case}: round trip lost content"))?;
        check(seq.mask.iter().all(|&m| m == 1), || format!("case {case}: unexpected padding"))?;
        check(seq.marker_positions.iter().all(|&p| seq.ids[p] == marker), || format!("case {case}: marker id"))?;
        check(seq.ids[seq.len() - 1] == marker, || format!("case {case}: no trailing marker"))?;
        let markers = seq.marker_positions.len();
        check(max_len == UNLIMITED || n + markers + 1 <= max_len, || format!("case {case}: budget exceeded"))?;

        match seq.granularity_used {
            Some(Granularity::Tokens(g)) => {
                check(markers == n.div_ceil(g).max(1), || format!("case {case}: {markers} markers for n={n}, g={g}"))?;
                // largest n that fits, found by scanning down from the full length
                let fits = |m: usize| max_len == UNLIMITED || m + m.div_ceil(g).max(1) < max_len;
                let best = (0..=full.len()).rev().find(|&m| fits(m)).unwrap_or(0);
                check(n == best, || format!("case {case}: kept {n} tokens, budget allows {best}"))?;
            }
            Some(Granularity::Sentence) => {
                let bounds = sentence_boundaries(&text);
                let mut want: Vec<usize> = bounds.iter().copied().filter(|&b| b > 0 && b < n).collect();
                want.push(n);
                want.dedup();
                let mut got = Vec::new();
                let mut content = 0;
                for i in 1..seq.len() {
                    if is_marker[i] {
                        got.push(content);
                    } else {
                        content += 1;
                    }
                }
                check(got == want, || format!("case {case}: sentence markers after {got:?}, expected {want:?}"))?;
            }
            None => return Err(format!("case {case}: no granularity recorded")),
        }
        cases += 1;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{cases} cases in {:.2}s", start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 2. pooling against scalar-loop oracles

fn random_states(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

fn random_sequence(rng: &mut ChaCha8Rng, marker: TokenId) -> TokenSequence {
    let n = rng.random_range(1..40);
    let tokens: Vec<TokenId> = (0..n).map(|_| rng.random_range(3..30)).collect();
    let g = rng.random_range(1..10);
    let seq = landmark_encode(&tokens, None, &ChunkingStrategy::Fixed { granularity: g }, UNLIMITED, marker, rng).unwrap();
    let pad = rng.random_range(0..5);
    let total = seq.len() + pad;
    seq.padded(total)
}

fn row_mean(h: &Array2<f64>, rows: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; h.ncols()];
    for &r in rows {
        for j in 0..h.ncols() {
            out[j] += h[[r, j]];
        }
    }
    out.iter().map(|v| v / rows.len() as f64).collect()
}

fn scalar_ln(x: &[f64], gain: &Array1<f64>, bias: &Array1<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * gain[i] + bias[i]).collect()
}

fn tanh_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn vec_mat(x: &[f64], w: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols()).map(|j| (0..w.nrows()).map(|i| x[i] * w[[i, j]]).sum()).collect()
}

/// Dense-loop latent attention: per-token cross attention over the latents,
/// a pre-norm feed-forward residual, a mean over unmasked tokens, and the
/// output map.
fn latent_oracle(h: &Array2<f64>, seq: &TokenSequence, p: &LatentAttentionParams) -> Vec<f64> {
    let latents: Vec<Vec<f64>> = p.latents.rows().into_iter().map(|r| r.to_vec()).collect();
    let keys: Vec<Vec<f64>> = latents.iter().map(|l| vec_mat(l, &p.w_k)).collect();
    let values: Vec<Vec<f64>> = latents.iter().map(|l| vec_mat(l, &p.w_v)).collect();
    let dh = p.w_q.ncols();
    let mut acc = vec![0.0; dh];
    let mut count = 0.0;
    for i in 0..seq.len() {
        if seq.mask[i] == 0 {
            continue;
        }
        let q = vec_mat(&h.row(i).to_vec(), &p.w_q);
        let qn = scalar_ln(&q, &p.ln1_gain, &p.ln1_bias);
        let logits: Vec<f64> =
            keys.iter().map(|k| k.iter().zip(&qn).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut y = q.clone();
        for (wj, v) in w.iter().zip(&values) {
            for d in 0..dh {
                y[d] += wj / total * v[d];
            }
        }
        let yn = scalar_ln(&y, &p.ln2_gain, &p.ln2_bias);
        let hidden: Vec<f64> = vec_mat(&yn, &p.w_1).iter().enumerate().map(|(j, v)| tanh_gelu(v + p.b_1[j])).collect();
        let ffn = vec_mat(&hidden, &p.w_2);
        for d in 0..dh {
            acc[d] += ffn[d] + p.b_2[d] + y[d];
        }
        count += 1.0;
    }
    let mean: Vec<f64> = acc.iter().map(|v| v / count).collect();
    vec_mat(&mean, &p.w_out)
}

fn pooling_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 6;
    let latent_cfg = LatentConfig { latents: 4, latent_dim: 5, head_dim: 3, ffn_dim: 7 };
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let mut latent = LatentAttentionParams::init(d, &latent_cfg, &mut rng);
        latent.ln1_gain.mapv_inplace(|_| rng.random_range(0.5..1.5));
        latent.ln2_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        latent.b_1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let k = rng.random_range(1..5);
        let phase = rng.random_range(0..k);
        let strategies = [
            PoolingStrategy::Cls,
            PoolingStrategy::Mean,
            PoolingStrategy::MeanAtK { k, phase },
            PoolingStrategy::LMK,
            PoolingStrategy::MULTI_CLS,
            PoolingStrategy::LatentAttention,
        ];
        for strategy in &strategies {
            let marker = if *strategy == PoolingStrategy::MULTI_CLS { CLS } else { LMK };
            let seq = random_sequence(&mut rng, marker);
            let h = random_states(&mut rng, seq.len(), d);
            let active: Vec<usize> = (0..seq.len()).filter(|&i| seq.mask[i] == 1).collect();
            let want = match strategy {
                PoolingStrategy::Cls => h.row(0).to_vec(),
                PoolingStrategy::Mean => row_mean(&h, &active),
                PoolingStrategy::MeanAtK { k, phase } => {
                    let content: Vec<usize> =
                        active.iter().copied().filter(|&i| ![CLS, LMK, PAD].contains(&seq.ids[i])).collect();
                    let picked: Vec<usize> = content.iter().skip(*phase).step_by(*k).copied().collect();
                    if picked.is_empty() {
                        continue;
                    }
                    row_mean(&h, &picked)
                }
                PoolingStrategy::MarkerMean { .. } => {
                    let rows: Vec<usize> = active.iter().copied().filter(|&i| seq.ids[i] == marker).collect();
                    row_mean(&h, &rows)
                }
                PoolingStrategy::LatentAttention => latent_oracle(&h, &seq, &latent),
            };
            let hs = HiddenStates { states: h.clone(), trace: None };
            let got = pool(&hs, &seq, strategy, Some(&latent)).map_err(|e| format!("case {case} {strategy}: {e}"))?;
            for (a, b) in got.vector.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
            check(got.vector.len() == want.len(), || format!("case {case} {strategy}: dimension"))?;
            check(worst <= 1e-8, || format!("case {case} {strategy}: error {worst:.2e}"))?;
        }
        // single chunk: LMK equals the marker row exactly
        let tokens: Vec<TokenId> = (0..rng.random_range(1..8)).map(|_| rng.random_range(5..30)).collect();
        let seq = landmark_encode(&tokens, None, &ChunkingStrategy::Fixed { granularity: 8 }, UNLIMITED, LMK, &mut rng).unwrap();
        let h = random_states(&mut rng, seq.len(), d);
        let hs = HiddenStates { states: h.clone(), trace: None };
        let got = pool(&hs, &seq, &PoolingStrategy::LMK, None).unwrap();
        check(got.vector == h.row(seq.len() - 1), || format!("case {case}: single-chunk LMK is not the marker row"))?;
    }
    Ok(format!("100 instances per strategy, max error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 3. RoPE identities

fn rope_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut rel, mut shift, mut norm): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _ in 0..1000 {
        let d_head = 2 * rng.random_range(1..=32);
        let base = [10_000.0, 500.0, 1e6].choose(&mut rng).copied().unwrap();
        let theta = rope_frequencies(d_head, base).unwrap();
        let q: Vec<f64> = (0..d_head).map(|_| rng.sample(StandardNormal)).collect();
        let k: Vec<f64> = (0..d_head).map(|_| rng.sample(StandardNormal)).collect();
        let m = rng.random_range(0..2048) as f64;
        let n = rng.random_range(0..2048) as f64;
        let c = rng.random_range(0..4096) as f64;
        let lhs = dot(&rotate(&q, m, &theta).unwrap(), &rotate(&k, n, &theta).unwrap());
        let rhs = dot(&q, &rotate(&k, n - m, &theta).unwrap());
        rel = rel.max((lhs - rhs).abs());
        let moved = dot(&rotate(&q, m + c, &theta).unwrap(), &rotate(&k, n + c, &theta).unwrap());
        shift = shift.max((lhs - moved).abs());
        let r = rotate(&q, m, &theta).unwrap();
        norm = norm.max((dot(&r, &r).sqrt() - dot(&q, &q).sqrt()).abs());
    }
    check(rel <= 1e-9, || format!("relative identity off by {rel:.2e}"))?;
    check(shift <= 1e-9, || format!("translation changed a logit by {shift:.2e}"))?;
    check(norm <= 1e-6, || format!("norm changed by {norm:.2e}"))?;
    Ok(format!("1000 draws: identity {rel:.1e}, shift {shift:.1e}, norm {norm:.1e}"))
}

// ---------------------------------------------------------------------------
// 4. RoPE decay

fn rope_decay() -> Outcome {
    let curve = rope_decay_curve(10_000.0, 64, 1024).map_err(|e| e.to_string())?;
    check(curve[0] == 64.0, || format!("curve[0] = {}", curve[0]))?;
    let far = curve[512..=1024].iter().sum::<f64>() / curve[512..=1024].len() as f64;
    check(curve[0] >= 2.0 * far, || format!("curve[0] {} < 2 x {far}", curve[0]))?;
    let flat = rope_decay_curve(1.0, 64, 1024).map_err(|e| e.to_string())?;
    let err = flat.iter().enumerate().map(|(d, v)| (v - 64.0 * (d as f64).cos()).abs()).fold(0.0, f64::max);
    check(err <= 1e-9, || format!("base 1 deviates from 64 cos(d) by {err:.2e}"))?;
    Ok(format!("curve[0] = 64, far mean {far:.3}, base-1 error {err:.1e}"))
}

// ---------------------------------------------------------------------------
// 5. gradients

fn gradients() -> Outcome {
    let start = Instant::now();
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_words(words.iter().map(String::as_str));
    let triplets = vec![
        Triplet { query: "w1 w2".into(), positive: "w1 w2 w3 w4 w5 w6 w7".into(), negatives: vec!["w8 w9 w10 w3".into()] },
        Triplet { query: "w11 w12 w4".into(), positive: "w11 w12 w13 w14 w15".into(), negatives: vec!["w16 w17 w18 w0 w1".into()] },
    ];
    let mut worst = Vec::new();
    for name in ["cls", "mean", "mean@2", "lmk", "latent"] {
        let strategy: PoolingStrategy = name.parse().unwrap();
        let latent = (strategy == PoolingStrategy::LatentAttention)
            .then_some(LatentConfig { latents: 3, latent_dim: 8, head_dim: 4, ffn_dim: 6 });
        let model = Model::init(&EncoderConfig::small(1, 8, 2, vocab.len()), latent.as_ref(), &mut ChaCha8Rng::seed_from_u64(11))
            .map_err(|e| e.to_string())?;
        let config = TrainingConfig {
            pooling: strategy.clone(),
            chunking: ChunkingStrategy::Fixed { granularity: 2 },
            query_max_len: 8,
            doc_max_len: 16,
            hard_negatives: 1,
            ..TrainingConfig::default()
        };
        let batch = EncodedBatch::encode(&TripletBatch::new(triplets.clone()), &config, &vocab, &mut ChaCha8Rng::seed_from_u64(3))
            .map_err(|e| e.to_string())?;
        let report = grad_check(&model, &batch, &strategy, 0.5, 1e-5, 200, 7).map_err(|e| e.to_string())?;
        check(report.max_rel_error <= 1e-3, || format!("{name}: max relative error {:.2e}", report.max_rel_error))?;
        worst.push(format!("{name} {:.1e}", report.max_rel_error));
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("{} ({:.1}s)", worst.join(", "), start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 6. InfoNCE identities

fn infonce_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_uniform: f64 = 0.0;
    let mut worst_rows: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..8);
        let m = rng.random_range(n..20);
        let tau = rng.random_range(0.01..2.0);
        let positives: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let c = rng.random_range(-1.0..1.0);
        let (loss, _) = infonce_loss(&Array2::from_elem((n, m), c), &positives, tau).map_err(|e| e.to_string())?;
        worst_uniform = worst_uniform.max((loss - (m as f64).ln()).abs());
        let sims = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
        let (_, grad) = infonce_loss(&sims, &positives, tau).map_err(|e| e.to_string())?;
        for row in grad.rows() {
            worst_rows = worst_rows.max(row.sum().abs());
        }
    }
    check(worst_uniform <= 1e-9, || format!("uniform loss off ln(m) by {worst_uniform:.2e}"))?;
    check(worst_rows <= 1e-9, || format!("gradient row sum {worst_rows:.2e}"))?;
    let sims = ndarray::array![[0.5, 0.1], [0.2, 0.9]];
    let (loss, _) = infonce_loss(&sims, &[0, 1], 1.0).map_err(|e| e.to_string())?;
    let hand = 0.5 * ((1.0 + (-0.4f64).exp()).ln() + (1.0 + (-0.7f64).exp()).ln());
    check((loss - hand).abs() <= 1e-9, || format!("2x2 loss {loss} vs {hand}"))?;
    Ok(format!("uniform {worst_uniform:.1e}, row sums {worst_rows:.1e}, 2x2 {:.1e}", (loss - hand).abs()))
}

// ---------------------------------------------------------------------------
// 7. metrics

fn metric_oracle(ranking: &[String], grades: &BTreeMap<String, u32>, k: usize) -> [f64; 4] {
    let rel = |d: &str| *grades.get(d).unwrap_or(&0);
    let gain = |r: u32| 2f64.powi(r as i32) - 1.0;
    let dcg: f64 = ranking.iter().take(k).enumerate().map(|(i, d)| gain(rel(d)) / ((i + 2) as f64).log2()).sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &r)| gain(r) / ((i + 2) as f64).log2()).sum();
    let first = ranking.iter().take(k).position(|d| rel(d) > 0);
    [
        if idcg > 0.0 { dcg / idcg } else { 0.0 },
        if ranking.first().is_some_and(|d| rel(d) > 0) { 1.0 } else { 0.0 },
        first.map_or(0.0, |i| 1.0 / (i + 1) as f64),
        first.map_or(0.0, |_| 1.0),
    ]
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ks = [1, 3, 10];
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let ids: Vec<String> = (0..15).map(|i| format!("d{i}")).collect();
        let mut run = Run::default();
        let mut qrels = Qrels::default();
        for q in 0..4 {
            let qid = format!("q{q}");
            let mut order = ids.clone();
            order.shuffle(&mut rng);
            order.truncate(rng.random_range(1..=15));
            run.0.insert(qid.clone(), order.iter().map(|d| Hit { doc_id: d.clone(), score: 0.0 }).collect());
            for d in ids.choose_multiple(&mut rng, 5) {
                qrels.insert(qid.clone(), d.clone(), rng.random_range(0..=3));
            }
            qrels.insert(qid.clone(), ids.choose(&mut rng).unwrap().clone(), rng.random_range(1..=3));
        }
        let report = evaluate(&run, &qrels, &ks).map_err(|e| e.to_string())?;
        for m in &report.per_query {
            let ranking: Vec<String> = run.0[&m.query_id].iter().map(|h| h.doc_id.clone()).collect();
            for &k in &ks {
                let [ndcg, p1, mrr, hit] = metric_oracle(&ranking, qrels.get(&m.query_id).unwrap(), k);
                for (a, b) in [(m.ndcg[&k], ndcg), (m.precision_at_1, p1), (m.mrr[&k], mrr), (m.hit[&k], hit)] {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    check(worst <= 1e-9, || format!("metric error {worst:.2e}"))?;
    let grades = BTreeMap::from([("a".to_string(), 1)]);
    let rank2 = ndcg_at_k(&["b", "a", "c"], &grades, 10);
    let want = 1.0 / 3f64.log2();
    check((rank2 - want).abs() <= 1e-12, || format!("rank-2 case {rank2} vs {want}"))?;
    Ok(format!("50 instances, max error {worst:.1e}; rank-2 NDCG@10 = {rank2:.10}"))
}

// ---------------------------------------------------------------------------
// 8 and 9. planted-key extrapolation and attention bias

const TRAIN_STEPS: usize = 300;
const BATCH: usize = 16;
const EVAL_SEEDS: [u64; 3] = [1, 2, 3];
const EVAL_LEN: usize = 1024;
const EVAL_GRANULARITY: usize = 16;

struct Trained {
    name: &'static str,
    pooling: PoolingStrategy,
    model: Model,
}

fn planted_generator() -> PlantedKeyGenerator {
    PlantedKeyGenerator::new(PlantedKeyConfig { context_words: 8, ..PlantedKeyConfig::default() }).unwrap()
}

fn train_planted(generator: &PlantedKeyGenerator) -> Result<Vec<Trained>, String> {
    let vocab = generator.vocabulary();
    let encoder = EncoderConfig::small(2, 64, 4, vocab.len());
    let triplets = generator
        .triplets(TRAIN_STEPS * BATCH, 16..=110, 1, &mut ChaCha8Rng::seed_from_u64(107))
        .map_err(|e| e.to_string())?;
    let fixed = ChunkingStrategy::Fixed { granularity: EVAL_GRANULARITY };
    let variants = [
        ("cls", PoolingStrategy::Cls, fixed.clone()),
        ("mean", PoolingStrategy::Mean, fixed),
        ("lmk", PoolingStrategy::LMK, ChunkingStrategy::Variable { granularities: vec![8, 16, 32, 64] }),
    ];
    let mut out = Vec::new();
    for (name, pooling, chunking) in variants {
        let model = Model::init(&encoder, None, &mut ChaCha8Rng::seed_from_u64(7)).map_err(|e| e.to_string())?;
        let config = TrainingConfig {
            pooling: pooling.clone(),
            chunking,
            steps: TRAIN_STEPS,
            batch_size: BATCH,
            hard_negatives: 1,
            learning_rate: 1e-3,
            warmup_steps: TRAIN_STEPS / 10,
            query_max_len: 16,
            doc_max_len: 128,
            seed: 3,
            ..TrainingConfig::default()
        };
        let mut trainer = Trainer::new(model, vocab.clone(), config).map_err(|e| e.to_string())?;
        for chunk in triplets.chunks(BATCH) {
            trainer.train_step(&TripletBatch::new(chunk.to_vec())).map_err(|e| format!("{name}: {e}"))?;
        }
        out.push(Trained { name, pooling, model: trainer.model });
    }
    Ok(out)
}

fn extrapolation(generator: &PlantedKeyGenerator, models: &[Trained]) -> Outcome {
    let vocab = generator.vocabulary();
    let embedders: Vec<ModelEmbedder> = models
        .iter()
        .map(|t| ModelEmbedder {
            name: t.name.to_string(),
            model: &t.model,
            vocab: &vocab,
            options: EncodeOptions::new(t.pooling.clone(), ChunkingStrategy::Fixed { granularity: EVAL_GRANULARITY }, UNLIMITED),
            seed: 0,
        })
        .collect();
    let refs: Vec<&dyn TextEmbedder> = embedders.iter().map(|e| e as &dyn TextEmbedder).collect();
    let (mut lmk_hits, mut lmk_trials) = (0, 0);
    let mut chance = 0.0;
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in EVAL_SEEDS {
        let config = LongCtxConfig {
            lengths: vec![EVAL_LEN],
            trials: 300,
            pool_size: 100,
            key_range: (0.75, 1.0),
            budget_granularity: EVAL_GRANULARITY,
            seed,
        };
        let report = synthetic_longctx_suite(&refs, generator, &config).map_err(|e| e.to_string())?;
        chance = report.chance;
        let p = |name: &str| report.row(name, EVAL_LEN).unwrap();
        let (cls, mean, lmk) = (p("cls"), p("mean"), p("lmk"));
        if lmk.final_quarter_trials != lmk.trials || lmk.trials < 300 {
            failures.push(format!("seed {seed}: {} of {} keys in the final quarter", lmk.final_quarter_trials, lmk.trials));
        }
        lmk_hits += lmk.hits;
        lmk_trials += lmk.trials;
        lines.push(format!("seed {seed}: cls {:.3} mean {:.3} lmk {:.3}", cls.p_at_1, mean.p_at_1, lmk.p_at_1));
        if lmk.p_at_1 < cls.p_at_1 {
            failures.push(format!("seed {seed}: lmk {:.3} < cls {:.3}", lmk.p_at_1, cls.p_at_1));
        }
    }
    let (lo, hi) = wilson_interval(lmk_hits, lmk_trials, Z_95);
    lines.push(format!("lmk pooled {lmk_hits}/{lmk_trials} [{lo:.3}, {hi:.3}], chance {chance:.3}"));
    if lo <= chance {
        failures.push(format!("lmk interval [{lo:.3}, {hi:.3}] includes chance {chance}"));
    }
    if failures.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("{} ({})", failures.join("; "), lines.join("; ")))
    }
}

fn attention_bias(generator: &PlantedKeyGenerator, models: &[Trained]) -> Outcome {
    let vocab = generator.vocabulary();
    let content = content_for_budget(EVAL_LEN, EVAL_GRANULARITY);
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in EVAL_SEEDS {
        let mut ratios = BTreeMap::new();
        for t in models.iter().filter(|t| t.pooling != PoolingStrategy::Mean) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let options = EncodeOptions::new(t.pooling.clone(), ChunkingStrategy::Fixed { granularity: EVAL_GRANULARITY }, EVAL_LEN);
            let docs = (0..50)
                .map(|_| {
                    let key = generator.key_phrase(&mut rng);
                    let relative = rng.random::<f64>();
                    let doc = generator.document(&key, content, relative, &mut rng)?;
                    options.tokenize(&doc.text, &vocab, &mut rng)
                })
                .collect::<lmk_core::Result<Vec<_>>>()
                .map_err(|e| e.to_string())?;
            let profile = attention_span_profile(&t.model, &docs, &t.pooling, 20, Some(128)).map_err(|e| e.to_string())?;
            let first = profile.mass(0.0, 0.25);
            let last = profile.mass(0.75, 1.0);
            ratios.insert(t.name, (first, last, first / last));
        }
        let (cf, cl, cr) = ratios["cls"];
        let (_, _, lr) = ratios["lmk"];
        lines.push(format!("seed {seed}: cls {cf:.3}/{cl:.3} = {cr:.3}, lmk {lr:.3}"));
        if cf <= cl {
            failures.push(format!("seed {seed}: cls first quarter {cf:.3} <= last {cl:.3}"));
        }
        if (lr - 1.0).abs() >= (cr - 1.0).abs() {
            failures.push(format!("seed {seed}: lmk ratio {lr:.3} not closer to 1 than cls {cr:.3}"));
        }
    }
    if failures.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("{} ({})", failures.join("; "), lines.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// 10. directional hits

fn directional() -> Outcome {
    let model = Model::init(&EncoderConfig::small(2, 16, 2, 60), None, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = 8;
    let mut runs = Vec::new();
    for run in 0..5 {
        let chunks = rng.random_range(6..12);
        let docs: Vec<Vec<TokenId>> =
            (0..4).map(|_| (0..chunks * g - rng.random_range(0..g)).map(|_| rng.random_range(5..60)).collect()).collect();
        for k in [1, 2, 3] {
            let config = DirectionalConfig { granularity: g, k, max_len: UNLIMITED, min_chunks: None };
            let hits = directional_hits(&model, &docs, &config).map_err(|e| e.to_string())?;
            check(hits.any >= hits.left.max(hits.right), || format!("run {run} k {k}: union inequality broken: {hits:?}"))?;
            let a = serde_json::to_vec(&hits).unwrap();
            let b = serde_json::to_vec(&directional_hits(&model, &docs, &config).unwrap()).unwrap();
            check(a == b, || format!("run {run} k {k}: reports differ"))?;
            runs.push(hits.any);
        }
        let config = DirectionalConfig { granularity: g, k: chunks, max_len: UNLIMITED, min_chunks: Some(chunks) };
        let hits = directional_hits(&model, &docs, &config).map_err(|e| e.to_string())?;
        check(
            hits.left == 1.0 && hits.right == 1.0 && hits.any == 1.0,
            || format!("run {run}: k = landmarks gave {hits:?}"),
        )?;
    }
    Ok(format!("15 runs, any in [{:.2}, {:.2}]; k = |landmarks| gives all ones", runs.iter().cloned().fold(1.0, f64::min), runs.iter().cloned().fold(0.0, f64::max)))
}

// ---------------------------------------------------------------------------
// 11. reconstruction pretraining smoke

fn toy_sentences(rng: &mut ChaCha8Rng) -> Vec<String> {
    let subjects = ["the cat", "a dog", "my neighbour", "the teacher", "our team", "a bird", "the farmer", "her brother"];
    let verbs = ["sees", "likes", "carries", "paints", "finds", "follows", "builds", "cleans"];
    let objects = ["the red box", "a small boat", "the old house", "a green field", "the long road", "a warm coat", "the bright lamp", "a quiet river"];
    let tails = ["every morning", "after lunch", "near the station", "in the rain", "with great care", "before dark"];
    (0..200)
        .map(|_| {
            format!(
                "{} {} {} {}",
                subjects.choose(rng).unwrap(),
                verbs.choose(rng).unwrap(),
                objects.choose(rng).unwrap(),
                tails.choose(rng).unwrap()
            )
        })
        .collect()
}

fn retromae_smoke() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sentences = toy_sentences(&mut rng);
    let vocab = Vocabulary::build(&sentences, 1000).map_err(|e| e.to_string())?;
    let ln_v = (vocab.len() as f64).ln();
    let mut lines = Vec::new();
    for pooling in [PoolingStrategy::Cls, PoolingStrategy::LMK] {
        let model = Model::init(&EncoderConfig::small(1, 32, 4, vocab.len()), None, &mut ChaCha8Rng::seed_from_u64(12))
            .map_err(|e| e.to_string())?;
        let config = RetroMaeConfig {
            pooling: pooling.clone(),
            chunking: ChunkingStrategy::Fixed { granularity: 4 },
            max_len: 32,
            steps: 500,
            batch_size: 8,
            warmup_steps: 50,
            seed: 13,
            ..RetroMaeConfig::default()
        };
        let mut mae = RetroMae::new(model, vocab.clone(), config).map_err(|e| e.to_string())?;
        let texts: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let fixed = mae.fixed_batch(&texts[..32], 14).map_err(|e| e.to_string())?;
        let initial = mae.eval_loss(&fixed).map_err(|e| e.to_string())?;
        let mut order: Vec<usize> = Vec::new();
        for _ in 0..500 {
            let batch: Vec<&str> = (0..8)
                .map(|_| {
                    if order.is_empty() {
                        order = (0..texts.len()).collect();
                        order.shuffle(&mut rng);
                    }
                    texts[order.pop().unwrap()]
                })
                .collect();
            mae.step(&batch).map_err(|e| format!("{pooling}: {e}"))?;
        }
        let last = mae.eval_loss(&fixed).map_err(|e| e.to_string())?;
        lines.push(format!("{pooling} {initial:.3} -> {last:.3}"));
        check((initial - ln_v).abs() <= 0.1 * ln_v, || format!("{pooling}: step-0 loss {initial:.3} vs ln V {ln_v:.3}"))?;
        check(last < initial, || format!("{pooling}: loss did not fall ({initial:.3} -> {last:.3})"))?;
    }
    Ok(format!("ln V = {ln_v:.3}; {}", lines.join(", ")))
}

// ---------------------------------------------------------------------------

fn report(id: usize, label: &str, outcome: Outcome, failed: &mut usize) {
    match outcome {
        Ok(detail) => println!("criterion {id:>2} {label}: PASS ({detail})"),
        Err(detail) => {
            *failed += 1;
            println!("criterion {id:>2} {label}: FAIL ({detail})");
        }
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        // libtest-style listing for tooling that enumerates tests
        println!("acceptance: test");
        return;
    }
    let total = Instant::now();
    let mut failed = 0;
    report(1, "tokenization algebra", tokenization_algebra(), &mut failed);
    report(2, "pooling oracle equivalence", pooling_oracles(), &mut failed);
    report(3, "rope identities", rope_identities(), &mut failed);
    report(4, "rope decay", rope_decay(), &mut failed);
    report(5, "gradient correctness", gradients(), &mut failed);
    report(6, "infonce identities", infonce_identities(), &mut failed);
    report(7, "metric oracle", metrics(), &mut failed);

    let start = Instant::now();
    let generator = planted_generator();
    match train_planted(&generator) {
        Ok(models) => {
            let trained = start.elapsed();
            let mut extra = extrapolation(&generator, &models);
            let elapsed = start.elapsed();
            if elapsed > Duration::from_secs(30 * 60) {
                extra = Err(format!("took {:.0}s, limit 1800s", elapsed.as_secs_f64()));
            }
            let extra = extra.map(|d| format!("{d}; trained in {:.0}s, total {:.0}s", trained.as_secs_f64(), elapsed.as_secs_f64()));
            report(8, "long-context extrapolation ordering", extra, &mut failed);
            report(9, "attention-bias reproduction", attention_bias(&generator, &models), &mut failed);
        }
        Err(e) => {
            report(8, "long-context extrapolation ordering", Err(e.clone()), &mut failed);
            report(9, "attention-bias reproduction", Err(e), &mut failed);
        }
    }
    report(10, "directional-hits harness", directional(), &mut failed);
    report(11, "reconstruction pretraining smoke", retromae_smoke(), &mut failed);
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        11 - failed,
        total.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
