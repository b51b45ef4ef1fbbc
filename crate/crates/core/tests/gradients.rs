use lmk_core::encoder::EncoderConfig;
use lmk_core::nn::ParamTensors;
use lmk_core::pooling::{LatentConfig, PoolingStrategy};
use lmk_core::tokenizer::{ChunkingStrategy, Vocabulary};
use lmk_core::train::{
    check_gradients, grad_check, mask_example, reconstruction_loss, reconstruction_loss_and_grads, EncodedBatch,
    RetroMae, RetroMaeConfig, TrainingConfig, Triplet, TripletBatch,
};
use lmk_core::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
struct Vector(Vec<f64>);

impl ParamTensors for Vector {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![("x".into(), &self.0)]
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("x".into(), &mut self.0)]
    }
}

#[test]
fn linear_loss_is_exact() {
    let a: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let x = Vector((0..300).map(|i| (i as f64).cos()).collect());
    let grad = Vector(a.clone());
    let loss = |p: &Vector| Ok(p.0.iter().zip(&a).map(|(x, a)| x * a).sum::<f64>() + 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = check_gradients(&x, &grad, loss, 1e-5, 200, &mut rng).unwrap();
    assert_eq!(report.coordinates, 200);
    assert!(report.max_rel_error <= 1e-7, "{report:?}");
}

#[test]
fn wrong_gradient_is_detected() {
    let x = Vector(vec![1.0, 2.0, 3.0]);
    let grad = Vector(vec![2.0, 4.0, 7.0]);
    let loss = |p: &Vector| Ok(p.0.iter().map(|v| v * v).sum::<f64>());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = check_gradients(&x, &grad, loss, 1e-5, 200, &mut rng).unwrap();
    assert_eq!(report.coordinates, 3);
    assert!((report.max_rel_error - 1.0 / 7.0).abs() < 1e-6);
}

#[test]
fn step_outside_range_is_rejected() {
    let x = Vector(vec![1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(check_gradients(&x, &x, |_| Ok(0.0), 1e-2, 200, &mut rng).is_err());
}

fn toy_vocab() -> Vocabulary {
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    Vocabulary::from_words(words.iter().map(String::as_str))
}

fn toy_batch(vocab: &Vocabulary, strategy: &PoolingStrategy) -> EncodedBatch {
    let triplets = vec![
        Triplet { query: "w1 w2".into(), positive: "w1 w2 w3 w4 w5 w6 w7".into(), negatives: vec!["w8 w9 w10 w3".into()] },
        Triplet { query: "w11 w12 w4".into(), positive: "w11 w12 w13 w14 w15".into(), negatives: vec!["w16 w17 w18 w19 w0 w1".into()] },
    ];
    let config = TrainingConfig {
        pooling: strategy.clone(),
        chunking: ChunkingStrategy::Fixed { granularity: 2 },
        query_max_len: 8,
        doc_max_len: 16,
        hard_negatives: 1,
        ..TrainingConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    EncodedBatch::encode(&TripletBatch::new(triplets), &config, vocab, &mut rng).unwrap()
}

fn tiny_model(vocab: &Vocabulary, latent: bool) -> Model {
    let config = EncoderConfig::small(1, 8, 2, vocab.len());
    let latent = latent.then_some(LatentConfig { latents: 3, latent_dim: 8, head_dim: 4, ffn_dim: 6 });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    Model::init(&config, latent.as_ref(), &mut rng).unwrap()
}

#[test]
fn contrastive_gradients_match_finite_differences() {
    let vocab = toy_vocab();
    for strategy in ["cls", "mean", "mean@2", "lmk", "multicls", "latent"] {
        let strategy: PoolingStrategy = strategy.parse().unwrap();
        let model = tiny_model(&vocab, strategy == PoolingStrategy::LatentAttention);
        let batch = toy_batch(&vocab, &strategy);
        let report = grad_check(&model, &batch, &strategy, 0.5, 1e-5, 200, 7).unwrap();
        assert!(report.max_rel_error <= 1e-3, "{strategy}: {report:?}");
    }
}

#[test]
fn reconstruction_gradients_match_finite_differences() {
    let vocab = toy_vocab();
    for pooling in [PoolingStrategy::Cls, PoolingStrategy::LMK] {
        let config = RetroMaeConfig {
            pooling: pooling.clone(),
            chunking: ChunkingStrategy::Fixed { granularity: 3 },
            max_len: 16,
            ..RetroMaeConfig::default()
        };
        let model = tiny_model(&vocab, false);
        let pretrainer = RetroMae::new(model, vocab.clone(), config.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let examples: Vec<_> = ["w1 w2 w3 w4 w5 w6", "w7 w8 w9 w10"]
            .iter()
            .map(|t| mask_example(t, &vocab, &config, &mut rng).unwrap())
            .collect();
        let (_, grads) = reconstruction_loss_and_grads(&pretrainer.params, &examples, &pooling).unwrap();
        let report = check_gradients(
            &pretrainer.params,
            &grads,
            |p| reconstruction_loss(p, &examples, &pooling),
            1e-5,
            200,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-3, "{pooling}: {report:?}");
    }
}
