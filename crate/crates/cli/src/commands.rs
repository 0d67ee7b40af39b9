use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::Context as _;
use muscaps::data::{
    filter_pairs, generate_synthetic, load_examples, read_manifest, split, write_rejections, Pair, SplitSpec, Splits,
    SynthConfig, EMBEDDINGS_FILE, MANIFEST_FILE,
};
use muscaps::evalmetrics::{evaluate_captions, read_captions, retrieval_eval, write_captions, Candidate, Query};
use muscaps::model::{
    beam_decode, greedy_decode, load_checkpoint, save_checkpoint, AudioInput, Example, ExtractorKind, Fusion, Model,
    ModelConfig,
};
use muscaps::numcore::grad_check;
use muscaps::text::{load_embeddings, tokenize, EmbeddingTable, Vocabulary};
use muscaps::train::{small_probe, train_loop, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{self, Decode, SplitName};
use crate::NumericFailure;

const VOCAB_FILE: &str = "vocab.txt";

fn io_err(path: &Path, source: std::io::Error) -> muscaps::Error {
    muscaps::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn gen_data(cfg: &config::GenData) -> anyhow::Result<()> {
    let out = cfg.out.as_deref().expect("resolved");
    let synth = SynthConfig {
        pairs: cfg.pairs,
        classes: cfg.classes,
        instruments: cfg.instruments,
        descriptors: cfg.descriptors,
        frame_dim: cfg.frame_dim,
        frame_rate: cfg.frame_rate,
        min_seconds: cfg.min_seconds,
        max_seconds: cfg.max_seconds,
        chunk_seconds: cfg.chunk_seconds,
        noise: cfg.noise,
        embed_dim: cfg.embed_dim,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let pairs = generate_synthetic(&synth, out)?;
    config::echo(out, "gen-data", cfg)?;
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

/// Stored in every checkpoint so later commands can find the split and chunking.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    val_loss: f64,
    chunk_seconds: f64,
    splits: Splits,
}

fn embeddings_width(path: &Path) -> anyhow::Result<Option<usize>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().count() - 1))
}

fn pairs_by_id(pairs: &[Pair]) -> HashMap<&str, &Pair> {
    pairs.iter().map(|p| (p.id.as_str(), p)).collect()
}

fn select<'a>(by_id: &HashMap<&str, &'a Pair>, ids: &[String]) -> anyhow::Result<Vec<&'a Pair>> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| muscaps::Error::Data(format!("pair `{id}` is not in the corpus manifest")).into())
        })
        .collect()
}

fn save_with_vocab(dir: &Path, model: &Model, vocab: &Vocabulary, meta: &CheckpointMeta) -> muscaps::Result<()> {
    save_checkpoint(dir, model, serde_json::to_value(meta).expect("meta serializes"))?;
    vocab.save(&dir.join(VOCAB_FILE))
}

pub fn train(cfg: &config::Train) -> anyhow::Result<()> {
    let data = cfg.data.as_deref().expect("resolved");
    let out = cfg.out.as_deref().expect("resolved");
    create_dir(out)?;
    config::echo(out, "train", cfg)?;

    let manifest = read_manifest(&data.join(MANIFEST_FILE))?;
    let (kept, rejected) = filter_pairs(&manifest);
    write_rejections(&out.join("rejections.tsv"), &rejected)?;
    let ids: Vec<String> = kept.iter().map(|p| p.id.clone()).collect();
    let splits = split(
        &ids,
        &SplitSpec {
            train: cfg.train_ratio,
            val: cfg.val_ratio,
            test: cfg.test_ratio,
            seed: cfg.seed,
        },
    )?;
    write_file(&out.join("splits.json"), serde_json::to_string_pretty(&splits)? + "\n")?;
    log::info!(
        "{} pairs kept, {} rejected; split {}/{}/{}",
        kept.len(),
        rejected.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let by_id = pairs_by_id(&kept);
    let train_pairs = select(&by_id, &splits.train)?;
    let val_pairs = select(&by_id, &splits.val)?;
    let captions: Vec<Vec<String>> = train_pairs.iter().map(|p| tokenize(&p.caption)).collect();
    let vocab = Vocabulary::build(&captions, 1)?;
    vocab.save(&out.join(VOCAB_FILE))?;

    let emb_path = data.join(EMBEDDINGS_FILE);
    let embed_dim = match cfg.embed_dim {
        Some(d) => d,
        None => embeddings_width(&emb_path)?.unwrap_or(cfg.dims.embed()),
    };
    let embeddings = if emb_path.exists() {
        load_embeddings(&emb_path, &vocab, embed_dim, cfg.seed)?
    } else {
        log::warn!("{} not found; using random word vectors", emb_path.display());
        EmbeddingTable::random(vocab.len(), embed_dim, cfg.seed)
    };

    let load = |pairs: &[&Pair]| load_examples(data, pairs, &vocab, cfg.max_len, cfg.pretrained, cfg.chunk_seconds);
    let train_set = load(&train_pairs)?;
    let val_set = load(&val_pairs)?;
    let (feature_dim, frame_dim) = match &train_set[0].audio {
        AudioInput::Features(f) => (f.dim(), 0),
        AudioInput::Chunks(c) => (cfg.feature_dim, c.frame_dim()),
    };
    let hidden = cfg.hidden.unwrap_or(cfg.dims.hidden());
    let model_cfg = ModelConfig {
        fusion: cfg.fusion,
        extractor: cfg.pretrained,
        hidden_enc: hidden,
        hidden_dec: hidden,
        embed_dim,
        feature_dim,
        frame_dim,
        vocab_size: vocab.len(),
        max_len: cfg.max_len,
        dropout: cfg.dropout,
    };
    let mut model = Model::new(model_cfg, embeddings, cfg.seed)?;
    let train_cfg = TrainConfig {
        initial_lr: cfg.lr,
        max_epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        dropout: cfg.dropout,
        patience: cfg.patience,
        max_len: cfg.max_len,
        seed: cfg.seed,
        clip_norm: (cfg.clip_norm > 0.0).then_some(cfg.clip_norm),
    };

    let ckpt_root = out.join("checkpoints");
    let log_path = out.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let outcome = train_loop(&mut model, &train_set, &val_set, &train_cfg, |stats, model, improved| {
        let line = serde_json::to_string(stats).expect("stats serialize");
        writeln!(log_file, "{line}").map_err(|e| io_err(&log_path, e))?;
        let meta = CheckpointMeta {
            epoch: stats.epoch,
            val_loss: stats.val_loss,
            chunk_seconds: cfg.chunk_seconds,
            splits: splits.clone(),
        };
        save_with_vocab(&ckpt_root.join(format!("epoch_{}", stats.epoch)), model, &vocab, &meta)?;
        if improved {
            save_with_vocab(&ckpt_root.join("best"), model, &vocab, &meta)?;
        }
        Ok(())
    })?;
    println!(
        "best epoch {} (val loss {:.4}) after {} epochs; checkpoint in {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        outcome.log.len(),
        ckpt_root.join("best").display()
    );
    Ok(())
}

struct Loaded {
    model: Model,
    vocab: Vocabulary,
    examples: Vec<Example>,
}

fn load_split(ckpt: &Path, data: &Path, which: SplitName) -> anyhow::Result<Loaded> {
    let (model, manifest) = load_checkpoint(ckpt)?;
    let vocab = Vocabulary::load(&ckpt.join(VOCAB_FILE))?;
    if vocab.len() != model.config.vocab_size {
        return Err(muscaps::Error::Data(format!(
            "{}: vocabulary has {} tokens, model expects {}",
            ckpt.display(),
            vocab.len(),
            model.config.vocab_size
        ))
        .into());
    }
    let meta: CheckpointMeta = serde_json::from_value(manifest.meta)
        .with_context(|| format!("{}: checkpoint metadata lacks split information", ckpt.display()))
        .map_err(|e| muscaps::Error::Data(format!("{e:#}")))?;
    let ids = match which {
        SplitName::Train => &meta.splits.train,
        SplitName::Val => &meta.splits.val,
        SplitName::Test => &meta.splits.test,
    };
    if ids.is_empty() {
        return Err(muscaps::Error::Data(format!("the {which:?} split is empty")).into());
    }
    let pairs = read_manifest(&data.join(MANIFEST_FILE))?;
    let by_id = pairs_by_id(&pairs);
    let selected = select(&by_id, ids)?;
    let examples = load_examples(
        data,
        &selected,
        &vocab,
        model.config.max_len,
        model.config.extractor,
        meta.chunk_seconds,
    )?;
    Ok(Loaded { model, vocab, examples })
}

pub fn default_beam_size(fusion: Fusion) -> usize {
    match fusion {
        Fusion::Early => 5,
        Fusion::Late | Fusion::Attention => 3,
    }
}

pub fn caption(cfg: &config::Caption) -> anyhow::Result<()> {
    let out = cfg.out.as_deref().expect("resolved");
    let Loaded { model, vocab, examples } =
        load_split(cfg.ckpt.as_deref().expect("resolved"), cfg.data.as_deref().expect("resolved"), cfg.split)?;
    let max_len = cfg.max_len.unwrap_or(model.config.max_len);
    let beam_size = cfg.beam_size.unwrap_or(default_beam_size(model.config.fusion));
    let mut rows = Vec::with_capacity(examples.len());
    for ex in &examples {
        let hyp = match cfg.decode {
            Decode::Greedy => greedy_decode(&model, &ex.audio, max_len)?,
            Decode::Beam => beam_decode(&model, &ex.audio, beam_size, max_len)?.best,
        };
        rows.push((ex.id.clone(), vocab.decode(&hyp.ids).join(" ")));
    }
    create_dir(out)?;
    let mut resolved = cfg.clone();
    resolved.beam_size = Some(beam_size);
    resolved.max_len = Some(max_len);
    config::echo(out, "caption", &resolved)?;
    let path = out.join("captions.tsv");
    write_captions(&path, &rows)?;
    println!("wrote {} captions to {}", rows.len(), path.display());
    Ok(())
}

fn reference_captions(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    if path.is_dir() {
        let pairs = read_manifest(&path.join(MANIFEST_FILE))?;
        Ok(pairs.into_iter().map(|p| (p.id, p.caption)).collect())
    } else {
        Ok(read_captions(path)?.into_iter().collect())
    }
}

pub fn eval(cfg: &config::Eval) -> anyhow::Result<()> {
    let out = cfg.out.as_deref().expect("resolved");
    let candidates = read_captions(cfg.candidates.as_deref().expect("resolved"))?;
    let references = reference_captions(cfg.references.as_deref().expect("resolved"))?;
    let mut cand_tokens = Vec::with_capacity(candidates.len());
    let mut ref_tokens = Vec::with_capacity(candidates.len());
    for (id, caption) in &candidates {
        let reference = references
            .get(id)
            .ok_or_else(|| muscaps::Error::Data(format!("no reference caption for `{id}`")))?;
        cand_tokens.push(tokenize(caption));
        ref_tokens.push(tokenize(reference));
    }
    let report = evaluate_captions(&cand_tokens, &ref_tokens)?;
    create_dir(out)?;
    config::echo(out, "eval", cfg)?;
    let tsv = report.to_tsv();
    write_file(&out.join("report.tsv"), &tsv)?;
    write_file(&out.join("report.json"), report.to_json())?;
    print!("{tsv}");
    Ok(())
}

pub fn retrieve(cfg: &config::Retrieve) -> anyhow::Result<()> {
    let out = cfg.out.as_deref().expect("resolved");
    let Loaded { model, examples, .. } =
        load_split(cfg.ckpt.as_deref().expect("resolved"), cfg.data.as_deref().expect("resolved"), cfg.split)?;
    let queries: Vec<Query<'_>> = examples
        .iter()
        .map(|e| Query {
            caption: &e.caption,
            target: &e.id,
        })
        .collect();
    let pool: Vec<Candidate<'_>> = examples
        .iter()
        .map(|e| Candidate {
            id: &e.id,
            audio: &e.audio,
        })
        .collect();
    let outcome = retrieval_eval(&model, &queries, &pool)?;
    create_dir(out)?;
    config::echo(out, "retrieve", cfg)?;
    let mut ranks = String::new();
    for (e, r) in examples.iter().zip(&outcome.ranks) {
        ranks.push_str(&format!("{}\t{r}\n", e.id));
    }
    write_file(&out.join("ranks.tsv"), ranks)?;
    write_file(&out.join("retrieval.json"), serde_json::to_string_pretty(&outcome.metrics)? + "\n")?;
    let m = &outcome.metrics;
    println!("queries\t{}", m.queries);
    println!("R@1\t{:.2}\nR@5\t{:.2}\nR@10\t{:.2}\nmedian_rank\t{}", m.recall_at_1, m.recall_at_5, m.recall_at_10, m.median_rank);
    Ok(())
}

pub fn grad_check_cmd(cfg: &config::GradCheck) -> anyhow::Result<()> {
    let fusions: Vec<Fusion> = match cfg.fusion {
        Some(f) => vec![f],
        None => vec![Fusion::Early, Fusion::Late, Fusion::Attention],
    };
    let extractors: Vec<ExtractorKind> = match cfg.pretrained {
        Some(e) => vec![e],
        None => vec![ExtractorKind::FrozenFile, ExtractorKind::Trainable],
    };
    let combos: Vec<(Fusion, ExtractorKind)> =
        fusions.iter().flat_map(|&f| extractors.iter().map(move |&e| (f, e))).collect();
    let reports = std::thread::scope(|s| {
        let handles: Vec<_> = combos
            .iter()
            .map(|&(f, e)| {
                s.spawn(move || -> muscaps::Result<_> {
                    let mut probe = small_probe(f, e, cfg.seed)?;
                    grad_check(&mut probe, cfg.eps, cfg.tol)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient check thread panicked"))
            .collect::<muscaps::Result<Vec<_>>>()
    })?;

    let mut worst = 0.0f64;
    println!("fusion\tpretrained\tparam\tmax_rel_error");
    for ((f, e), report) in combos.iter().zip(&reports) {
        for p in &report.params {
            println!("{f}\t{e}\t{}\t{:.3e}", p.name, p.max_rel_error);
        }
        worst = worst.max(report.max_rel_error());
    }
    println!("max\t{worst:.3e}\ttol\t{:.1e}", cfg.tol);
    if reports.iter().all(|r| r.all_passed()) {
        Ok(())
    } else {
        Err(NumericFailure(format!("max relative error {worst:.3e} exceeds {:.1e}", cfg.tol)).into())
    }
}
