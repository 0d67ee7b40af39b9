use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use muscaps::audiofeat::FeatureSequence;
use muscaps::data::{generate_synthetic, load_examples, Pair, SynthConfig};
use muscaps::evalmetrics::*;
use muscaps::model::*;
use muscaps::numcore::{grad_check, Matrix};
use muscaps::text::{load_embeddings, tokenize, EmbeddingTable, Vocabulary};
use muscaps::train::{next_token_accuracy, small_probe, train_loop, TrainConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/common/mod.rs"]
mod common;

const ALL: [(Fusion, ExtractorKind); 6] = [
    (Fusion::Early, ExtractorKind::FrozenFile),
    (Fusion::Early, ExtractorKind::Trainable),
    (Fusion::Late, ExtractorKind::FrozenFile),
    (Fusion::Late, ExtractorKind::Trainable),
    (Fusion::Attention, ExtractorKind::FrozenFile),
    (Fusion::Attention, ExtractorKind::Trainable),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut all = true;
    for (i, (fusion, extractor)) in ALL.into_iter().enumerate() {
        let mut probe = small_probe(fusion, extractor, i as u64).unwrap();
        let report = grad_check(&mut probe, 1e-5, 1e-4).unwrap();
        all &= report.all_passed();
        worst = worst.max(report.max_rel_error());
    }
    let elapsed = start.elapsed();
    outcome(
        all && worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("max rel error {worst:.2e} over 6 configurations, {:.1} s", elapsed.as_secs_f64()),
    )
}

/// Random small model with weights scaled so decoding choices are sharp.
fn random_model(fusion: Fusion, extractor: ExtractorKind, vocab: usize, seed: u64) -> (Model, AudioInput) {
    let cfg = ModelConfig {
        fusion,
        extractor,
        hidden_enc: 8,
        hidden_dec: 8,
        embed_dim: 5,
        feature_dim: 6,
        frame_dim: if extractor == ExtractorKind::Trainable { 4 } else { 0 },
        vocab_size: vocab,
        max_len: 3,
        dropout: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = EmbeddingTable {
        table: Matrix::uniform(vocab, 5, 1.0, &mut rng),
        frozen: true,
    };
    let mut m = Model::new(cfg, emb, rng.random()).unwrap();
    for (_, t) in m.params.value.tensors_mut() {
        t.scale(3.0);
    }
    let audio = match extractor {
        ExtractorKind::FrozenFile => AudioInput::Features(FeatureSequence::new(Matrix::uniform(3, 6, 1.0, &mut rng))),
        ExtractorKind::Trainable => AudioInput::Chunks(muscaps::audiofeat::ChunkSet {
            chunks: (0..3).map(|_| Matrix::uniform(5, 4, 1.0, &mut rng)).collect(),
            chunk_seconds: 1.0,
        }),
    };
    (m, audio)
}

fn decoder_oracle() -> Outcome {
    let (vocab, max_len) = (6, 3);
    let (mut exhaustive_ok, mut greedy_ok) = (0, 0);
    for seed in 0..20u64 {
        let (fusion, extractor) = ALL[seed as usize % ALL.len()];
        let (m, audio) = random_model(fusion, extractor, vocab, seed);
        let (ids, lp) = common::exhaustive(&m.session(&audio).unwrap(), max_len);
        let beam = beam_decode(&m, &audio, vocab.pow(max_len as u32), max_len).unwrap();
        exhaustive_ok += usize::from(beam.best.ids == ids && beam.best.logprob == lp);
        let one = beam_decode(&m, &audio, 1, max_len).unwrap();
        greedy_ok += usize::from(one.best == greedy_decode(&m, &audio, max_len).unwrap());
    }
    outcome(
        exhaustive_ok == 20 && greedy_ok == 20,
        format!("exhaustive beam = brute force {exhaustive_ok}/20, beam 1 = greedy {greedy_ok}/20"),
    )
}

fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}

fn metric_oracles() -> Outcome {
    const WORDS: [&str; 10] = ["calm", "dark", "piano", "guitar", "synth", "strings", "melody", "groove", "theme", "and"];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let caption = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.random_range(1..12);
        (0..len).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
    };
    let refs: Vec<Vec<String>> = (0..200).map(|_| caption(&mut rng)).collect();
    let cands: Vec<Vec<String>> = refs
        .iter()
        .map(|r| if rng.random_bool(0.5) { r.clone() } else { caption(&mut rng) })
        .collect();

    let mut exact = (1..=4).all(|n| bleu(&cands, &refs, n).unwrap() == common::naive::bleu(&cands, &refs, n));
    exact &= cands
        .iter()
        .zip(&refs)
        .all(|(c, r)| rouge_l(c, r).unwrap() == common::naive::rouge_l(c, r));
    exact &= cider(&cands, &refs, &CorpusDf::build(&refs).unwrap()).unwrap() == common::naive::cider(&cands, &refs);

    let clipped = bleu(&[toks("the the the the the the the")], &[toks("the cat is on the mat")], 1).unwrap();
    let rouge = rouge_l(&toks("a b c d"), &toks("a c d")).unwrap();
    let two = vec![toks("red guitar melody"), toks("soft piano ballad")];
    let cid = cider(&two, &two, &CorpusDf::build(&two).unwrap()).unwrap();
    let anchors = (clipped - 2.0 / 7.0).abs() < 1e-15 && (rouge - 0.8798).abs() < 1e-4 && (cid - 7.5).abs() < 1e-6;
    outcome(
        exact && anchors,
        format!("naive recount exact on 200 pairs: {exact}; anchors {clipped:.6} {rouge:.4} {cid:.6}"),
    )
}

struct Memorized {
    model: Model,
    vocab: Vocabulary,
    pairs: Vec<Pair>,
    train: Vec<Example>,
}

fn corpus(dir: &Path, seed: u64, pairs: usize) -> Vec<Pair> {
    generate_synthetic(&SynthConfig { pairs, seed, ..SynthConfig::default() }, dir).unwrap()
}

fn memorize(root: &Path) -> (Outcome, Memorized) {
    let (dir, val_dir) = (root.join("mem"), root.join("mem-val"));
    let pairs = corpus(&dir, 7, 50);
    let val_pairs = corpus(&val_dir, 8, 10);
    let caps: Vec<Vec<String>> = pairs.iter().map(|p| tokenize(&p.caption)).collect();
    let vocab = Vocabulary::build(&caps, 1).unwrap();
    let emb = load_embeddings(&dir.join("embeddings.txt"), &vocab, 32, 0).unwrap();
    let ext = ExtractorKind::FrozenFile;
    let train = load_examples(&dir, &pairs.iter().collect::<Vec<_>>(), &vocab, 22, ext, 3.0).unwrap();
    let mut val = load_examples(&val_dir, &val_pairs.iter().collect::<Vec<_>>(), &vocab, 22, ext, 3.0).unwrap();
    for v in &mut val {
        v.id = format!("val-{}", v.id);
    }
    let cfg = ModelConfig {
        fusion: Fusion::Attention,
        extractor: ext,
        hidden_enc: 64,
        hidden_dec: 64,
        embed_dim: 32,
        feature_dim: 16,
        frame_dim: 0,
        vocab_size: vocab.len(),
        max_len: 22,
        dropout: 0.0,
    };
    let mut model = Model::new(cfg, emb, 1).unwrap();
    let tc = TrainConfig {
        initial_lr: 3e-3,
        max_epochs: 300,
        batch_size: 16,
        dropout: 0.25,
        patience: 300,
        max_len: 22,
        seed: 0,
        clip_norm: Some(5.0),
    };

    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (accuracy, verbatim) = pool.install(|| {
        train_loop(&mut model, &train, &val, &tc, |_, _, _| Ok(())).unwrap();
        let accuracy = next_token_accuracy(&model, &train).unwrap();
        let verbatim = train
            .iter()
            .zip(&caps)
            .filter(|(ex, cap)| vocab.decode(&greedy_decode(&model, &ex.audio, 22).unwrap().ids) == **cap)
            .count();
        (accuracy, verbatim)
    });
    let elapsed = start.elapsed();
    let result = outcome(
        accuracy >= 0.95 && verbatim >= 45 && elapsed < Duration::from_secs(600),
        format!(
            "train accuracy {:.1}%, verbatim {verbatim}/50, {:.1} s on one thread",
            100.0 * accuracy,
            elapsed.as_secs_f64()
        ),
    );
    (result, Memorized { model, vocab, pairs, train })
}

fn ablation(root: &Path) -> Outcome {
    let mut wins = 0;
    let mut detail = Vec::new();
    for s in 0..5u64 {
        let dir = root.join(format!("ablation-{s}"));
        let pairs = corpus(&dir, 100 + s, 250);
        let caps: Vec<Vec<String>> = pairs[..200].iter().map(|p| tokenize(&p.caption)).collect();
        let vocab = Vocabulary::build(&caps, 1).unwrap();
        let mut best = Vec::new();
        for ext in [ExtractorKind::FrozenFile, ExtractorKind::Trainable] {
            let all = load_examples(&dir, &pairs.iter().collect::<Vec<_>>(), &vocab, 22, ext, 3.0).unwrap();
            let (train, val) = all.split_at(200);
            let cfg = ModelConfig {
                fusion: Fusion::Attention,
                extractor: ext,
                hidden_enc: 32,
                hidden_dec: 32,
                embed_dim: 32,
                feature_dim: 16,
                frame_dim: if ext == ExtractorKind::Trainable { 16 } else { 0 },
                vocab_size: vocab.len(),
                max_len: 22,
                dropout: 0.25,
            };
            let emb = load_embeddings(&dir.join("embeddings.txt"), &vocab, 32, 0).unwrap();
            let mut model = Model::new(cfg, emb, s).unwrap();
            let tc = TrainConfig {
                initial_lr: 3e-3,
                max_epochs: 40,
                patience: 40,
                seed: s,
                ..TrainConfig::default()
            };
            best.push(train_loop(&mut model, train, val, &tc, |_, _, _| Ok(())).unwrap().best_val_loss);
        }
        wins += usize::from(best[0] < best[1]);
        detail.push(format!("{:.3}/{:.3}", best[0], best[1]));
    }
    outcome(
        wins >= 4,
        format!("frozen < trainable val loss in {wins}/5 seeds ({})", detail.join(", ")),
    )
}

fn retrieval(mem: &Memorized) -> Outcome {
    let ids: Vec<&str> = mem.pairs.iter().map(|p| p.id.as_str()).collect();
    let queries: Vec<Query<'_>> = mem
        .train
        .iter()
        .zip(&ids)
        .map(|(ex, id)| Query { caption: &ex.caption, target: id })
        .collect();
    let pool: Vec<Candidate<'_>> = mem
        .train
        .iter()
        .zip(&ids)
        .map(|(ex, id)| Candidate { id, audio: &ex.audio })
        .collect();
    let r1 = retrieval_eval(&mem.model, &queries, &pool).unwrap().metrics.recall_at_1;
    let hand = retrieval_metrics(&[1, 2, 5, 40], 50).unwrap();
    let hand_ok = hand.recall_at_1 == 25.0 && hand.recall_at_5 == 75.0 && hand.median_rank == 3.5;
    outcome(
        r1 >= 90.0 && hand_ok,
        format!(
            "R@1 {r1:.1}% on 50 clips; ranks example R@1 {} R@5 {} median {}",
            hand.recall_at_1, hand.recall_at_5, hand.median_rank
        ),
    )
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_sum = 0.0f64;
    let mut worst_uniform = 0.0f64;
    let mut single_exact = true;
    for _ in 0..100 {
        let (h, k, l) = (rng.random_range(1..10), rng.random_range(1..8), rng.random_range(1..9));
        let mut w = AttentionWeights::init(h, k, h, &mut rng);
        for m in [&mut w.score, &mut w.w_audio, &mut w.w_hidden] {
            m.scale(4.0);
        }
        let h_enc = Matrix::uniform(h, 1, 2.0, &mut rng).into_vec();
        let feats = Matrix::uniform(l, k, 3.0, &mut rng);
        let (_, beta) = attend(&feats, &h_enc, &w).unwrap();
        worst_sum = worst_sum.max((beta.iter().sum::<f64>() - 1.0).abs());

        let row = Matrix::uniform(1, k, 3.0, &mut rng).into_vec();
        let same = Matrix::from_rows(&vec![row.clone(); l]).unwrap();
        let (_, beta) = attend(&same, &h_enc, &w).unwrap();
        worst_uniform = beta.iter().fold(worst_uniform, |m, b| m.max((b - 1.0 / l as f64).abs()));

        let (_, beta) = attend(&Matrix::from_rows(&[row]).unwrap(), &h_enc, &w).unwrap();
        single_exact &= beta == [1.0];
    }
    outcome(
        worst_sum <= 1e-9 && worst_uniform <= 1e-9 && single_exact,
        format!("row sum error {worst_sum:.1e}, uniform error {worst_uniform:.1e}, L=1 exact: {single_exact}"),
    )
}

fn caption_statistics(mem: &Memorized) -> Outcome {
    let reps = |s: &str| caption_stats(&[toks(s)]).repetitions;
    let (a, b) = (reps("upbeat acoustic guitar guitar"), reps("and strings and strings"));
    let decode = |beam: bool| -> Vec<Vec<String>> {
        mem.train
            .iter()
            .map(|ex| {
                let h = if beam {
                    beam_decode(&mem.model, &ex.audio, 3, 22).unwrap().best
                } else {
                    greedy_decode(&mem.model, &ex.audio, 22).unwrap()
                };
                mem.vocab.decode(&h.ids)
            })
            .collect()
    };
    let (greedy, beam) = (caption_stats(&decode(false)).repetitions, caption_stats(&decode(true)).repetitions);
    outcome(
        a == 1 && b == 1,
        format!(
            "examples give {a} and {b} repetitions; beam 3 {beam} vs greedy {greedy} repetitions ({}, not gated)",
            if beam <= greedy { "non-increasing" } else { "increasing" }
        ),
    )
}

fn muscaps(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_muscaps"))
        .args(args)
        .current_dir(dir)
        .env_remove("MUSCAPS_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(root: &Path) -> Outcome {
    let run = |name: &str| {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        muscaps(&dir, &["gen-data", "--seed", "7", "--pairs", "60", "--out", "corpus"]);
        muscaps(&dir, &["train", "--data", "corpus", "--epochs", "5", "--lr", "3e-3", "--seed", "11"]);
        muscaps(&dir, &["caption", "--ckpt", "checkpoints/best", "--data", "corpus"]);
        muscaps(&dir, &["eval", "--candidates", "captions.tsv", "--references", "corpus"]);
        dir
    };
    let (a, b) = (run("run-a"), run("run-b"));
    let mut same = Vec::new();
    let mut differ = Vec::new();
    let checkpoints = files(&a.join("checkpoints"));
    let ok = !checkpoints.is_empty() && checkpoints == files(&b.join("checkpoints"));
    if ok { &mut same } else { &mut differ }.push("checkpoints".to_string());
    for f in ["captions.tsv", "report.tsv", "report.json"] {
        let ok = fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
        if ok { &mut same } else { &mut differ }.push(f.to_string());
    }
    outcome(
        differ.is_empty(),
        format!("identical: [{}]; differing: [{}]", same.join(", "), differ.join(", ")),
    )
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    record(1, "gradient fidelity", gradient_fidelity());
    record(2, "decoder oracle", decoder_oracle());
    record(3, "metric oracles", metric_oracles());
    let (mem_outcome, mem) = memorize(root);
    record(4, "memorization", mem_outcome);
    record(5, "pretraining ablation", ablation(root));
    record(6, "retrieval", retrieval(&mem));
    record(7, "attention invariants", attention_invariants());
    record(8, "caption statistics", caption_statistics(&mem));
    record(9, "determinism", determinism(root));

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, o)| !o.pass)
        .map(|(n, name, _)| format!("{n} ({name})"))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
