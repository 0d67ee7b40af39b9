use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AudioInput, Model};
use crate::text::{TokenSequence, SOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub queries: usize,
    pub candidates: usize,
    /// Percentages.
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub median_rank: f64,
}

/// Candidate indices ordered by descending score, ties by ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// 1-based position of `target` in [`ranking`] order.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < target))
        .count()
}

/// Recall@{1,5,10} in percent and the median rank (mean of the middle two for even counts).
pub fn retrieval_metrics(ranks: &[usize], candidates: usize) -> Result<RetrievalMetrics> {
    if ranks.is_empty() {
        return Err(Error::Argument("no retrieval queries".into()));
    }
    if ranks.iter().any(|&r| r == 0) {
        return Err(Error::Argument("ranks are 1-based".into()));
    }
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2] as f64
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) as f64 / 2.0
    };
    Ok(RetrievalMetrics {
        queries: m,
        candidates,
        recall_at_1: recall(1),
        recall_at_5: recall(5),
        recall_at_10: recall(10),
        median_rank: median,
    })
}

pub struct Query<'a> {
    pub caption: &'a TokenSequence,
    /// Id of the clip the caption belongs to.
    pub target: &'a str,
}

pub struct Candidate<'a> {
    pub id: &'a str,
    pub audio: &'a AudioInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub metrics: RetrievalMetrics,
    /// Rank of the ground-truth clip, per query.
    pub ranks: Vec<usize>,
}

/// `scores[q][c] = log P(caption_q | audio_c)`, computed per candidate in parallel.
pub fn score_matrix(model: &Model, queries: &[Query<'_>], pool: &[Candidate<'_>]) -> Result<Vec<Vec<f64>>> {
    for q in queries {
        if q.caption.ids.len() < 2 || q.caption.ids[0] != SOS {
            return Err(Error::Argument(format!("query for `{}` is not a framed caption", q.target)));
        }
    }
    let by_candidate: Vec<Vec<f64>> = pool
        .par_iter()
        .map(|cand| {
            let session = model.session(cand.audio)?;
            queries
                .iter()
                .map(|q| {
                    let mut state = session.initial_state();
                    let mut total = 0.0;
                    for pair in q.caption.ids.windows(2) {
                        let (logp, next) = session.step(&state, pair[0])?;
                        total += logp[pair[1]];
                        state = next;
                    }
                    if !total.is_finite() {
                        return Err(Error::NonFinite(format!("retrieval score for candidate `{}`", cand.id)));
                    }
                    Ok(total)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..queries.len())
        .map(|q| by_candidate.iter().map(|col| col[q]).collect())
        .collect())
}

/// Ranks every candidate clip for each caption by `log P(caption | clip)`.
pub fn retrieval_eval(model: &Model, queries: &[Query<'_>], pool: &[Candidate<'_>]) -> Result<RetrievalOutcome> {
    let targets: Vec<usize> = queries
        .iter()
        .map(|q| {
            pool.iter()
                .position(|c| c.id == q.target)
                .ok_or_else(|| Error::Data(format!("ground-truth clip `{}` missing from the pool", q.target)))
        })
        .collect::<Result<_>>()?;
    let scores = score_matrix(model, queries, pool)?;
    let ranks: Vec<usize> = scores.iter().zip(&targets).map(|(s, &t)| rank_of(s, t)).collect();
    Ok(RetrievalOutcome {
        metrics: retrieval_metrics(&ranks, pool.len())?,
        ranks,
    })
}
