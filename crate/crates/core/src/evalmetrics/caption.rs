use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N-gram multiset of one token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts<T: Ord>(pub BTreeMap<Vec<T>, usize>);

impl<T: Ord + Clone> NGramCounts<T> {
    pub fn of(tokens: &[T], n: usize) -> Self {
        let mut map = BTreeMap::new();
        if n > 0 {
            for w in tokens.windows(n) {
                *map.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        Self(map)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

fn check_pairs<T>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<()> {
    if references.is_empty() {
        return Err(Error::Argument("no references".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Argument(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Corpus BLEU with uniform weights over `1..=n_max`, one reference per candidate.
///
/// Clipped n-gram matches and candidate n-gram totals are pooled over the
/// corpus before taking precisions; the brevity penalty uses total lengths.
/// Any zero precision makes the score zero.
pub fn bleu<T: Ord + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n_max: usize) -> Result<f64> {
    check_pairs(candidates, references)?;
    if !(1..=4).contains(&n_max) {
        return Err(Error::Argument(format!("BLEU order {n_max} outside 1..=4")));
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=n_max {
        let mut matched = 0;
        let mut total = 0;
        for (cand, reference) in candidates.iter().zip(references) {
            let cc = NGramCounts::of(cand, n);
            let rc = NGramCounts::of(reference, n);
            total += cc.total();
            matched += cc
                .0
                .iter()
                .map(|(g, &k)| k.min(rc.0.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let bp = (1.0 - r as f64 / c as f64).min(0.0).exp();
    Ok(bp * (log_sum / n_max as f64).exp())
}

pub const ROUGE_BETA: f64 = 1.2;

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with `β = 1.2`.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Argument("empty ROUGE-L reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let r = lcs / reference.len() as f64;
    let p = lcs / candidate.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * r * p / (r + b2 * p))
}

/// Mean ROUGE-L over candidate/reference pairs.
pub fn rouge_l_corpus<T: Eq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    check_pairs(candidates, references)?;
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        sum += rouge_l(c, r)?;
    }
    Ok(sum / references.len() as f64)
}

pub const CIDER_MAX_N: usize = 4;

/// Document frequencies of reference n-grams, `n = 1..=4`.
#[derive(Debug, Clone)]
pub struct CorpusDf<T: Ord> {
    pub df: Vec<BTreeMap<Vec<T>, usize>>,
    /// Number of reference documents `M`.
    pub docs: usize,
}

impl<T: Ord + Clone> CorpusDf<T> {
    pub fn build(references: &[Vec<T>]) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Argument("CIDEr document frequencies need at least one reference".into()));
        }
        let mut df = vec![BTreeMap::new(); CIDER_MAX_N];
        for reference in references {
            for (n, table) in (1..=CIDER_MAX_N).zip(df.iter_mut()) {
                for g in NGramCounts::of(reference, n).0.into_keys() {
                    *table.entry(g).or_insert(0) += 1;
                }
            }
        }
        Ok(Self {
            df,
            docs: references.len(),
        })
    }

    /// `ln(M / max(df, 1))`.
    pub fn idf(&self, n: usize, gram: &[T]) -> f64 {
        let df = self.df[n - 1].get(gram).copied().unwrap_or(0).max(1);
        (self.docs as f64 / df as f64).ln()
    }
}

fn tfidf<T: Ord + Clone>(tokens: &[T], n: usize, df: &CorpusDf<T>) -> BTreeMap<Vec<T>, f64> {
    NGramCounts::of(tokens, n)
        .0
        .into_iter()
        .map(|(g, k)| {
            let w = k as f64 * df.idf(n, &g);
            (g, w)
        })
        .collect()
}

fn cosine<T: Ord>(a: &BTreeMap<Vec<T>, f64>, b: &BTreeMap<Vec<T>, f64>) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    dot / (na * nb)
}

/// Original CIDEr: `10 ×` the mean over `n = 1..=4` of the corpus-mean cosine
/// between tf-idf n-gram vectors, without the CIDEr-D length penalty.
pub fn cider<T: Ord + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], df: &CorpusDf<T>) -> Result<f64> {
    check_pairs(candidates, references)?;
    if df.docs == 0 {
        return Err(Error::Argument("CIDEr over an empty corpus".into()));
    }
    if df.docs == 1 {
        log::warn!("CIDEr over a single reference document: every idf is zero, score is 0");
    }
    let mut total = 0.0;
    for n in 1..=CIDER_MAX_N {
        let mut sum = 0.0;
        for (c, r) in candidates.iter().zip(references) {
            sum += cosine(&tfidf(c, n, df), &tfidf(r, n, df));
        }
        total += sum / candidates.len() as f64;
    }
    Ok(10.0 * total / CIDER_MAX_N as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub tokens: usize,
    pub unk_rate: f64,
    /// Positions whose unigram or bigram repeats the adjacent preceding one.
    pub repetitions: usize,
    /// Repetitions per token.
    pub repetition_rate: f64,
}

/// Counts `<unk>` tokens and adjacent repeats ("guitar guitar", "and strings and strings").
pub fn caption_stats<S: AsRef<str>>(captions: &[Vec<S>]) -> CaptionStats {
    let unk = crate::text::SPECIAL_TOKENS[crate::text::UNK];
    let mut tokens = 0;
    let mut unks = 0;
    let mut repetitions = 0;
    for cap in captions {
        let toks: Vec<&str> = cap.iter().map(AsRef::as_ref).collect();
        tokens += toks.len();
        unks += toks.iter().filter(|&&t| t == unk).count();
        for t in 1..toks.len() {
            let unigram = toks[t] == toks[t - 1];
            let bigram = t >= 3 && toks[t - 1..=t] == toks[t - 3..=t - 2];
            repetitions += usize::from(unigram || bigram);
        }
    }
    let rate = |k: usize| if tokens == 0 { 0.0 } else { k as f64 / tokens as f64 };
    CaptionStats {
        tokens,
        unk_rate: rate(unks),
        repetitions,
        repetition_rate: rate(repetitions),
    }
}
