use muscaps::evalmetrics::*;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::naive;

const WORDS: [&str; 12] = [
    "calm", "dark", "piano", "guitar", "synth", "strings", "melody", "groove", "theme", "soft", "bright", "and",
];

fn random_caption(rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.random_range(1..12);
    (0..len).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
}

fn corpus(seed: u64, n: usize) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<Vec<String>> = (0..n).map(|_| random_caption(&mut rng)).collect();
    let cands = refs
        .iter()
        .map(|r| {
            // Mix near-copies with unrelated captions.
            if rng.random_bool(0.5) {
                let mut c = r.clone();
                if !c.is_empty() && rng.random_bool(0.5) {
                    let i = rng.random_range(0..c.len());
                    c[i] = WORDS.choose(&mut rng).unwrap().to_string();
                }
                c
            } else {
                random_caption(&mut rng)
            }
        })
        .collect();
    (cands, refs)
}

#[test]
fn metrics_equal_the_naive_recount_exactly() {
    for seed in 0..5 {
        let (cands, refs) = corpus(seed, 200);
        for n in 1..=4 {
            assert_eq!(bleu(&cands, &refs, n).unwrap(), naive::bleu(&cands, &refs, n), "BLEU_{n} seed {seed}");
        }
        for (c, r) in cands.iter().zip(&refs) {
            assert_eq!(rouge_l(c, r).unwrap(), naive::rouge_l(c, r));
        }
        assert_eq!(rouge_l_corpus(&cands, &refs).unwrap(), naive::rouge_l_corpus(&cands, &refs));
        let df = CorpusDf::build(&refs).unwrap();
        assert_eq!(cider(&cands, &refs, &df).unwrap(), naive::cider(&cands, &refs), "CIDEr seed {seed}");
    }
}

#[test]
fn report_scales_and_lists_unavailable_metrics() {
    let (cands, refs) = corpus(1, 30);
    let report = evaluate_captions(&cands, &refs).unwrap();
    assert_eq!(report.bleu[3], 100.0 * naive::bleu(&cands, &refs, 4));
    assert_eq!(report.cider, 100.0 * naive::cider(&cands, &refs));
    let tsv = report.to_tsv();
    assert!(tsv.lines().next().unwrap().starts_with("# "));
    for line in ["METEOR\tn/a", "SPICE\tn/a", "SPIDEr\tn/a"] {
        assert!(tsv.contains(line));
    }
    let back: MetricReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn caption_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("caps.tsv");
    let rows = vec![("a".to_string(), "calm piano theme".to_string()), ("b".into(), "dark synth".into())];
    write_captions(&path, &rows).unwrap();
    assert_eq!(read_captions(&path).unwrap(), rows);
    std::fs::write(&path, "no tab here\n").unwrap();
    assert!(read_captions(&path).is_err());
}

fn relabel(caps: &[Vec<String>], shift: usize) -> Vec<Vec<String>> {
    caps.iter()
        .map(|c| {
            c.iter()
                .map(|w| {
                    let i = WORDS.iter().position(|x| x == w).unwrap();
                    format!("w{}", (i + shift) % WORDS.len())
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scores_ignore_token_spelling(seed in any::<u64>(), shift in 0usize..12) {
        let (cands, refs) = corpus(seed, 20);
        let (rc, rr) = (relabel(&cands, shift), relabel(&refs, shift));
        for n in 1..=4 {
            prop_assert_eq!(bleu(&cands, &refs, n).unwrap(), bleu(&rc, &rr, n).unwrap());
        }
        prop_assert_eq!(rouge_l_corpus(&cands, &refs).unwrap(), rouge_l_corpus(&rc, &rr).unwrap());
        let a = cider(&cands, &refs, &CorpusDf::build(&refs).unwrap()).unwrap();
        let b = cider(&rc, &rr, &CorpusDf::build(&rr).unwrap()).unwrap();
        // Summation order follows token order, so only rounding may differ.
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ranks_survive_monotone_rescaling(scores in prop::collection::vec(-50.0f64..0.0, 1..40), pick in any::<prop::sample::Index>()) {
        let target = pick.index(scores.len());
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let r = rank_of(&scores, target);
        prop_assert_eq!(r, rank_of(&affine, target));
        prop_assert_eq!(r, rank_of(&cubed, target));
        prop_assert_eq!(ranking(&scores).iter().position(|&i| i == target).unwrap() + 1, r);
    }
}
