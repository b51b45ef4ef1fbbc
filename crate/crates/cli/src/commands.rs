//! Command implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lmk_core::diagnostics::{
    attention_span_profile, directional_hits, lmk_overhead, rope_decay_curve, synthetic_longctx_suite,
    write_curve_csv, DirectionalConfig, KeyBagEmbedder, ModelEmbedder, PlantedKeyGenerator, RandomEmbedder,
    TextEmbedder,
};
use lmk_core::eval::{embed_corpus, evaluate, search_all, Corpus, Qrels, Run};
use lmk_core::model::EncodeOptions;
use lmk_core::pooling::{LatentConfig, PoolingStrategy};
use lmk_core::tokenizer::{ChunkingStrategy, Vocabulary, UNLIMITED};
use lmk_core::train::{load_triplets, RetroMae, Trainer, TripletBatch};
use lmk_core::Model;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::manifest::{prepare, write_json};
use crate::{Cli, Command, Diagnose, ModelArgs, UsageError};

/// Independent generator for one purpose, derived from the run seed.
fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_RANDOM_EMBEDDER: u64 = 3;

pub fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    let mut overrides = overrides.to_vec();
    if let Some(seed) = cli.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    let config = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::BuildVocab { corpus, triplets, out } => build_vocab(&config, &corpus, &triplets, &out),
        Command::Train { vocab, triplets, init, out } => train(&config, &vocab, &triplets, init.as_ref(), &out),
        Command::Pretrain { vocab, corpus, init, out } => pretrain(&config, &vocab, &corpus, init.as_ref(), &out),
        Command::Embed { model, corpus, out } => embed(&config, &model, &corpus, &out),
        Command::Search { model, corpus, queries, out } => search(&config, &model, &corpus, &queries, &out),
        Command::Eval { run, qrels, out } => eval(&config, &run, &qrels, out.as_ref()),
        Command::Diagnose(d) => diagnose(&config, d),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading records {}", path.display()))
}

fn build_vocab(config: &RunConfig, corpus: &[PathBuf], triplets: &[PathBuf], out: &Path) -> Result<()> {
    if corpus.is_empty() && triplets.is_empty() {
        return Err(UsageError("build-vocab needs --corpus or --triplets".into()).into());
    }
    let mut texts = Vec::new();
    for p in corpus {
        texts.extend(load_corpus(p)?.records().iter().map(|r| r.text.clone()));
    }
    for p in triplets {
        for t in load_triplets(p).with_context(|| format!("loading triplets {}", p.display()))? {
            texts.push(t.query);
            texts.push(t.positive);
            texts.extend(t.negatives);
        }
    }
    let vocab = Vocabulary::build(&texts, config.vocab.max_size)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    vocab.save(out)?;
    println!("{} tokens", vocab.len());
    Ok(())
}

/// Fresh model sized to `vocab`, or the checkpoint at `init`.
fn starting_model(config: &RunConfig, vocab: &Vocabulary, pooling: &PoolingStrategy, init: Option<&PathBuf>) -> Result<Model> {
    if let Some(p) = init {
        return load_model(p);
    }
    let mut enc = config.encoder.clone();
    enc.vocab_size = vocab.len();
    let latent: Option<&LatentConfig> = (*pooling == PoolingStrategy::LatentAttention).then_some(&config.latent);
    Ok(Model::init(&enc, latent, &mut rng_for(config.seed, STREAM_INIT))?)
}

fn train(config: &RunConfig, vocab_path: &Path, triplets_path: &PathBuf, init: Option<&PathBuf>, out: &Path) -> Result<()> {
    let vocab = load_vocab(vocab_path)?;
    let mut triplets = load_triplets(triplets_path).with_context(|| format!("loading {}", triplets_path.display()))?;
    if triplets.is_empty() {
        bail!("no triplets in {}", triplets_path.display());
    }
    let tc = &config.training;
    for t in &mut triplets {
        t.negatives.truncate(tc.hard_negatives);
    }
    let vocab_buf = vocab_path.to_path_buf();
    let mut inputs = vec![&vocab_buf, triplets_path];
    if let Some(p) = init {
        inputs.push(p);
    }
    prepare(out, "train", config, &inputs)?;
    let model = starting_model(config, &vocab, &tc.pooling, init)?;
    let mut trainer = Trainer::new(model, vocab, tc.clone())?;
    let mut shuffle = rng_for(config.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = Vec::new();
    let mut log = create(&out.join("train_log.csv"))?;
    writeln!(log, "step,loss,grad_norm,learning_rate,top1")?;
    let mut last = f64::NAN;
    for _ in 0..tc.steps {
        let mut batch = Vec::with_capacity(tc.batch_size);
        while batch.len() < tc.batch_size.min(triplets.len()) {
            if order.is_empty() {
                order = (0..triplets.len()).collect();
                order.shuffle(&mut shuffle);
            }
            batch.push(triplets[order.pop().expect("refilled above")].clone());
        }
        let r = trainer.train_step(&TripletBatch::new(batch))?;
        let top1 = r.ranks.iter().filter(|&&x| x == 1).count() as f64 / r.ranks.len() as f64;
        writeln!(log, "{},{},{},{},{}", r.step, r.loss, r.grad_norm, r.learning_rate, top1)?;
        last = r.loss;
    }
    log.flush()?;
    trainer.model.save(out.join("model.bin"))?;
    trainer.vocab().save(out.join("vocab.tsv"))?;
    println!("trained {} steps, final loss {last:.6}", tc.steps);
    Ok(())
}

fn pretrain(config: &RunConfig, vocab_path: &Path, corpus_path: &PathBuf, init: Option<&PathBuf>, out: &Path) -> Result<()> {
    let vocab = load_vocab(vocab_path)?;
    let corpus = load_corpus(corpus_path)?;
    if corpus.is_empty() {
        bail!("no records in {}", corpus_path.display());
    }
    let vocab_buf = vocab_path.to_path_buf();
    let mut inputs = vec![&vocab_buf, corpus_path];
    if let Some(p) = init {
        inputs.push(p);
    }
    prepare(out, "pretrain", config, &inputs)?;
    let pc = &config.pretraining;
    let model = starting_model(config, &vocab, &pc.pooling, init)?;
    let mut mae = RetroMae::new(model, vocab, pc.clone())?;
    let texts = corpus.texts();
    let mut shuffle = rng_for(config.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = Vec::new();
    let mut log = create(&out.join("pretrain_log.csv"))?;
    writeln!(log, "step,loss")?;
    let mut last = f64::NAN;
    for step in 1..=pc.steps {
        let mut batch = Vec::with_capacity(pc.batch_size);
        while batch.len() < pc.batch_size.min(texts.len()) {
            if order.is_empty() {
                order = (0..texts.len()).collect();
                order.shuffle(&mut shuffle);
            }
            batch.push(texts[order.pop().expect("refilled above")]);
        }
        last = mae.step(&batch)?;
        writeln!(log, "{step},{last}")?;
    }
    log.flush()?;
    mae.params.model.save(out.join("model.bin"))?;
    mae.vocab().save(out.join("vocab.tsv"))?;
    println!("pretrained {} steps, final loss {last:.6}", pc.steps);
    Ok(())
}

fn embed(config: &RunConfig, m: &ModelArgs, corpus_path: &PathBuf, out: &Path) -> Result<()> {
    let (model, vocab) = (load_model(&m.model)?, load_vocab(&m.vocab)?);
    let corpus = load_corpus(corpus_path)?;
    prepare(out, "embed", config, &[&m.model, &m.vocab, corpus_path])?;
    let e = &config.encode;
    let rows = embed_corpus(&corpus.texts(), &model, &vocab, &e.options(), e.batch_size, config.seed)?;
    rows.save(out.join("embeddings.bin"))?;
    rows.write_text(&corpus.ids(), create(&out.join("embeddings.txt"))?)?;
    println!("{} x {} embeddings ({})", rows.rows.nrows(), rows.rows.ncols(), rows.strategy);
    Ok(())
}

fn search(config: &RunConfig, m: &ModelArgs, corpus_path: &PathBuf, queries_path: &PathBuf, out: &Path) -> Result<()> {
    let (model, vocab) = (load_model(&m.model)?, load_vocab(&m.vocab)?);
    let corpus = load_corpus(corpus_path)?;
    let queries = load_corpus(queries_path)?;
    prepare(out, "search", config, &[&m.model, &m.vocab, corpus_path, queries_path])?;
    let e = &config.encode;
    let opts = e.options();
    let docs = embed_corpus(&corpus.texts(), &model, &vocab, &opts, e.batch_size, config.seed)?;
    let q = embed_corpus(&queries.texts(), &model, &vocab, &opts, e.batch_size, config.seed)?;
    let run = search_all(&queries, &q, &corpus, &docs, config.search.k)?;
    run.write_trec(create(&out.join("run.trec"))?, &format!("lmk-{}", opts.strategy))?;
    println!("searched {} queries against {} documents", queries.len(), corpus.len());
    Ok(())
}

fn eval(config: &RunConfig, run_path: &PathBuf, qrels_path: &PathBuf, out: Option<&PathBuf>) -> Result<()> {
    let run = Run::load_trec(run_path).with_context(|| format!("loading run {}", run_path.display()))?;
    let qrels = Qrels::load(qrels_path).with_context(|| format!("loading qrels {}", qrels_path.display()))?;
    let report = evaluate(&run, &qrels, &config.eval.ks)?;
    if let Some(dir) = out {
        prepare(dir, "eval", config, &[run_path, qrels_path])?;
        report.write_json(create(&dir.join("metrics.json"))?)?;
        report.write_csv(create(&dir.join("metrics.csv"))?)?;
    }
    println!("queries\t{} (excluded {}, missing {})", report.evaluated, report.excluded, report.missing);
    println!("p@1\t{:.6}", report.precision_at_1);
    for k in &report.ks {
        println!("ndcg@{k}\t{:.6}\tmrr@{k}\t{:.6}\thit@{k}\t{:.6}", report.ndcg[k], report.mrr[k], report.hit[k]);
    }
    Ok(())
}

fn diagnose(config: &RunConfig, which: Diagnose) -> Result<()> {
    let d = &config.diagnostics;
    match which {
        Diagnose::Overhead { tokens, granularity } => {
            println!("{}", lmk_overhead(tokens, granularity)?.markers);
        }
        Diagnose::Decay { base, d_head, max_dist, out } => {
            let curve = rope_decay_curve(base, d_head, max_dist)?;
            match out {
                Some(p) => write_curve_csv(&curve, create(&p)?)?,
                None => write_curve_csv(&curve, std::io::stdout().lock())?,
            }
        }
        Diagnose::Span { model, corpus, out } => {
            let (m, vocab) = (load_model(&model.model)?, load_vocab(&model.vocab)?);
            let docs = load_corpus(&corpus)?;
            prepare(&out, "diagnose span", config, &[&model.model, &model.vocab, &corpus])?;
            let opts = config.encode.options();
            let mut rng = rng_for(config.seed, STREAM_SHUFFLE);
            let seqs = docs
                .texts()
                .iter()
                .map(|t| opts.tokenize(t, &vocab, &mut rng))
                .collect::<lmk_core::Result<Vec<_>>>()?;
            let profile = attention_span_profile(&m, &seqs, &opts.strategy, d.n_bins, d.trained_max_len)?;
            profile.write_csv(create(&out.join("span.csv"))?)?;
            write_json(&out.join("span.json"), &profile)?;
            println!("first/last quarter mass ratio {:.4}", profile.quarter_ratio());
        }
        Diagnose::Directional { model, corpus, out } => {
            let (m, vocab) = (load_model(&model.model)?, load_vocab(&model.vocab)?);
            let docs = load_corpus(&corpus)?;
            prepare(&out, "diagnose directional", config, &[&model.model, &model.vocab, &corpus])?;
            let ids: Vec<_> = docs.texts().iter().map(|t| vocab.encode(t)).collect();
            let dc = DirectionalConfig { granularity: d.granularity, k: d.k, max_len: d.max_len, min_chunks: d.min_chunks };
            let hits = directional_hits(&m, &ids, &dc)?;
            write_json(&out.join("directional.json"), &hits)?;
            println!("left {:.4} right {:.4} any {:.4} over {} chunks", hits.left, hits.right, hits.any, hits.chunks);
        }
        Diagnose::Longctx { models, vocab, baselines, out } => longctx(config, &models, vocab.as_ref(), baselines, &out)?,
    }
    Ok(())
}

fn parse_model_spec(spec: &str) -> Result<(String, PoolingStrategy, PathBuf)> {
    let bad = || UsageError(format!("--model expects name=pooling:path, got {spec:?}"));
    let (name, rest) = spec.split_once('=').ok_or_else(bad)?;
    let (pooling, path) = rest.split_once(':').ok_or_else(bad)?;
    let pooling = pooling.parse().map_err(|e| UsageError(format!("{e}")))?;
    Ok((name.to_string(), pooling, PathBuf::from(path)))
}

fn longctx(config: &RunConfig, specs: &[String], vocab: Option<&PathBuf>, baselines: bool, out: &Path) -> Result<()> {
    if specs.is_empty() && !baselines {
        return Err(UsageError("longctx needs at least one --model or --baselines".into()).into());
    }
    let generator = PlantedKeyGenerator::new(config.planted.clone())?;
    let vocab_path = vocab;
    let vocab = match vocab {
        Some(p) => load_vocab(p)?,
        None => generator.vocabulary(),
    };
    let parsed = specs.iter().map(|s| parse_model_spec(s)).collect::<Result<Vec<_>>>()?;
    let mut inputs: Vec<&PathBuf> = parsed.iter().map(|(_, _, p)| p).collect();
    inputs.extend(vocab_path);
    prepare(out, "diagnose longctx", config, &inputs)?;
    let loaded = parsed
        .iter()
        .map(|(name, pooling, path)| Ok((name.clone(), pooling.clone(), load_model(path)?)))
        .collect::<Result<Vec<_>>>()?;
    let chunking = ChunkingStrategy::Fixed { granularity: config.longctx.budget_granularity };
    let model_embedders: Vec<ModelEmbedder> = loaded
        .iter()
        .map(|(name, pooling, m)| ModelEmbedder {
            name: name.clone(),
            model: m,
            vocab: &vocab,
            options: EncodeOptions::new(pooling.clone(), chunking.clone(), UNLIMITED),
            seed: config.seed,
        })
        .collect();
    let key_bag = KeyBagEmbedder { key_words: config.planted.key_words };
    let random = RandomEmbedder { dim: config.encoder.d_model, seed: rng_seed(config.seed) };
    let mut embedders: Vec<&dyn TextEmbedder> = model_embedders.iter().map(|e| e as &dyn TextEmbedder).collect();
    if baselines {
        embedders.push(&key_bag);
        embedders.push(&random);
    }
    let report = synthetic_longctx_suite(&embedders, &generator, &config.longctx)?;
    write_json(&out.join("longctx.json"), &report)?;
    report.write_csv(create(&out.join("longctx.csv"))?)?;
    for r in &report.rows {
        println!(
            "{}\t{}\tP@1 {:.4} [{:.4}, {:.4}]\tfinal quarter {}/{}",
            r.embedder, r.length, r.p_at_1, r.ci_low, r.ci_high, r.final_quarter_hits, r.final_quarter_trials
        );
    }
    Ok(())
}

fn rng_seed(seed: u64) -> u64 {
    use rand::RngCore;
    rng_for(seed, STREAM_RANDOM_EMBEDDER).next_u64()
}
