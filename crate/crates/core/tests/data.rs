use std::fs;
use std::path::PathBuf;

use muscaps::audiofeat::{mean_pool, FeatureSequence};
use muscaps::data::*;
use muscaps::model::{AudioInput, ExtractorKind};
use muscaps::text::{tokenize, Vocabulary};
use proptest::prelude::*;

fn pair(id: &str, caption: &str, duration: f64) -> Pair {
    Pair {
        id: id.into(),
        features: None,
        frames: None,
        caption: caption.into(),
        duration_seconds: duration,
    }
}

#[test]
fn filter_rules_in_order() {
    let pairs = vec![
        pair("short", "calm piano melody", 20.0),
        pair("two", "calm piano", 45.0),
        pair("three", "calm piano melody", 45.0),
        pair("dup", "Calm piano melody.", 100.0),
        pair("long", "calm piano melody", 400.0),
        pair("edge", "dark synth groove", 360.0),
    ];
    let (kept, rejected) = filter_pairs(&pairs);
    let ids: Vec<&str> = kept.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["three", "edge"]);
    let log: Vec<(&str, FilterRule)> = rejected.iter().map(|r| (r.id.as_str(), r.rule)).collect();
    assert_eq!(
        log,
        [
            ("short", FilterRule::Duration),
            ("two", FilterRule::TokenCount),
            ("dup", FilterRule::Duplicate),
            ("long", FilterRule::Duration),
        ]
    );
}

#[test]
fn split_sizes_floor_with_remainder_to_train() {
    let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    let s = split(&ids, &SplitSpec::default()).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    let ids: Vec<String> = (0..11).map(|i| format!("p{i}")).collect();
    let s = split(&ids, &SplitSpec::default()).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 2, 2));
    assert_eq!(s, split(&ids, &SplitSpec::default()).unwrap());
    assert!(split(&ids[..2], &SplitSpec::default()).is_err());
    let bad = SplitSpec { train: 0.5, ..SplitSpec::default() };
    assert!(split(&ids, &bad).is_err());
}

fn arb_pairs() -> impl Strategy<Value = Vec<Pair>> {
    let words = prop::sample::select(vec!["calm", "dark", "piano", "synth", "theme", "groove"]);
    prop::collection::vec((prop::collection::vec(words, 0..26), 0.0f64..500.0), 0..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (w, d))| pair(&format!("p{i}"), &w.join(" "), d))
            .collect()
    })
}

proptest! {
    #[test]
    fn filter_is_idempotent(pairs in arb_pairs()) {
        let (once, _) = filter_pairs(&pairs);
        let (twice, rejected) = filter_pairs(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert!(rejected.is_empty());
        prop_assert_eq!(once.len() + filter_pairs(&pairs).1.len(), pairs.len());
    }

    #[test]
    fn split_is_a_partition(n in 5usize..200, seed in any::<u64>(), val in 0.0f64..0.4, test in 0.0f64..0.4) {
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let spec = SplitSpec { train: 1.0 - val - test, val, test, seed };
        let s = split(&ids, &spec).unwrap();
        prop_assert_eq!(s.val.len(), (n as f64 * val).floor() as usize);
        prop_assert_eq!(s.test.len(), (n as f64 * test).floor() as usize);
        let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        let mut expected = ids.clone();
        expected.sort();
        prop_assert_eq!(all, expected);
    }
}

fn read_tree(dir: &std::path::Path) -> Vec<(PathBuf, Vec<u8>)> {
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

#[test]
fn synthetic_corpus_is_byte_reproducible() {
    let cfg = SynthConfig { pairs: 12, ..SynthConfig::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_synthetic(&cfg, a.path()).unwrap();
    generate_synthetic(&cfg, b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.len(), 12 * 2 + 2);
    assert_eq!(ta, tb);
    let other = tempfile::tempdir().unwrap();
    generate_synthetic(&SynthConfig { seed: 8, ..cfg }, other.path()).unwrap();
    assert_ne!(ta, read_tree(other.path()));
}

#[test]
fn synthetic_captions_pass_the_filter_and_are_distinct() {
    let cfg = SynthConfig { pairs: 288, ..SynthConfig::default() };
    let items = synthesize(&cfg).unwrap();
    let pairs: Vec<Pair> = items.iter().map(|it| pair(&it.id, &it.caption, it.clip.duration())).collect();
    let (kept, rejected) = filter_pairs(&pairs);
    assert!(rejected.is_empty(), "{rejected:?}");
    assert_eq!(kept.len(), 288);
    assert!(synthesize(&SynthConfig { pairs: 289, ..cfg }).is_err());
}

#[test]
fn noiseless_same_class_clips_share_frames() {
    let cfg = SynthConfig {
        pairs: 40,
        noise: 0.0,
        detail_scale: 0.0,
        ..SynthConfig::default()
    };
    let items = synthesize(&cfg).unwrap();
    let mut checked = 0;
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            let n = a.clip.frames.rows().min(b.clip.frames.rows());
            let prefix = |m: &muscaps::numcore::Matrix| m.as_slice()[..n * cfg.frame_dim].to_vec();
            if a.class == b.class {
                assert_eq!(prefix(&a.clip.frames), prefix(&b.clip.frames));
                checked += 1;
            } else {
                assert_ne!(prefix(&a.clip.frames), prefix(&b.clip.frames));
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn classes_are_decodable_from_pooled_features() {
    let cfg = SynthConfig { pairs: 288, noise: 0.1, ..SynthConfig::default() };
    let items = synthesize(&cfg).unwrap();
    let pooled: Vec<Vec<f64>> = items
        .iter()
        .map(|it| {
            let f = chunk_mean_features(&it.clip, cfg.chunk_seconds).unwrap();
            mean_pool(&FeatureSequence::new(f)).unwrap().0
        })
        .collect();
    // Leave-one-out nearest centroid.
    let mut correct = 0;
    for (i, x) in pooled.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        for c in 0..cfg.classes {
            let members: Vec<&Vec<f64>> = pooled
                .iter()
                .zip(&items)
                .enumerate()
                .filter(|&(j, (_, it))| j != i && it.class == c)
                .map(|(_, (p, _))| p)
                .collect();
            let d: f64 = (0..cfg.frame_dim)
                .map(|k| {
                    let mean = members.iter().map(|m| m[k]).sum::<f64>() / members.len() as f64;
                    (x[k] - mean).powi(2)
                })
                .sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        correct += usize::from(best.1 == items[i].class);
    }
    assert!(correct as f64 / pooled.len() as f64 >= 0.99, "{correct}/{}", pooled.len());
}

#[test]
fn manifest_round_trip_and_loading() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { pairs: 4, ..SynthConfig::default() };
    let pairs = generate_synthetic(&cfg, dir.path()).unwrap();
    assert_eq!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), pairs);

    let caps: Vec<Vec<String>> = pairs.iter().map(|p| tokenize(&p.caption)).collect();
    let vocab = Vocabulary::build(&caps, 1).unwrap();
    let refs: Vec<&Pair> = pairs.iter().collect();
    let frozen = load_examples(dir.path(), &refs, &vocab, 22, ExtractorKind::FrozenFile, 3.0).unwrap();
    let chunks = load_examples(dir.path(), &refs, &vocab, 22, ExtractorKind::Trainable, 3.0).unwrap();
    for (f, c) in frozen.iter().zip(&chunks) {
        match (&f.audio, &c.audio) {
            (AudioInput::Features(fs), AudioInput::Chunks(cs)) => {
                assert_eq!(fs.len(), cs.len());
                assert_eq!(fs.dim(), cfg.frame_dim);
            }
            _ => panic!("wrong audio variant"),
        }
        assert_eq!(f.caption.ids.len(), 7);
    }

    // A feature file whose row count disagrees with the clip is rejected.
    let short = muscaps::numcore::Matrix::zeros(1, cfg.frame_dim);
    muscaps::audiofeat::write_matrix(&dir.path().join("short.mcf"), muscaps::audiofeat::FEATURE_MAGIC, &short).unwrap();
    let mut broken = pairs[0].clone();
    broken.features = Some("short.mcf".into());
    assert!(load_examples(dir.path(), &[&broken], &vocab, 22, ExtractorKind::FrozenFile, 3.0).is_err());
    let mut missing = pairs[0].clone();
    missing.frames = None;
    assert!(load_examples(dir.path(), &[&missing], &vocab, 22, ExtractorKind::Trainable, 3.0).is_err());
}

#[test]
fn manifest_rejects_duplicate_ids_and_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let p = pair("a", "calm piano theme", 40.0);
    write_manifest(&path, &[p.clone(), p]).unwrap();
    assert!(read_manifest(&path).is_err());
    fs::write(&path, "{\"id\": 3}\n").unwrap();
    let err = read_manifest(&path).unwrap_err();
    assert!(matches!(err, muscaps::Error::Parse { line: 1, .. }));
}
