//! Independent oracles shared by test targets.
#![allow(dead_code)]

use muscaps::model::{RecurrentState, Session};
use muscaps::text::{EOS, PAD, SOS};

/// Straightforward recounts with plain vectors and linear scans.
pub mod naive {
    fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
        if n == 0 || tokens.len() < n {
            return Vec::new();
        }
        (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
    }

    fn count(list: &[Vec<String>], g: &[String]) -> usize {
        list.iter().filter(|x| x.as_slice() == g).count()
    }

    fn unique(mut list: Vec<Vec<String>>) -> Vec<Vec<String>> {
        list.sort();
        list.dedup();
        list
    }

    pub fn bleu(cands: &[Vec<String>], refs: &[Vec<String>], n_max: usize) -> f64 {
        let c: usize = cands.iter().map(Vec::len).sum();
        let r: usize = refs.iter().map(Vec::len).sum();
        if c == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 1..=n_max {
            let (mut matched, mut total) = (0usize, 0usize);
            for (cand, reference) in cands.iter().zip(refs) {
                let cg = grams(cand, n);
                let rg = grams(reference, n);
                total += cg.len();
                for g in unique(cg.clone()) {
                    matched += count(&cg, &g).min(count(&rg, &g));
                }
            }
            if matched == 0 {
                return 0.0;
            }
            log_sum += (matched as f64 / total as f64).ln();
        }
        let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
        bp * (log_sum / n_max as f64).exp()
    }

    fn lcs(a: &[String], b: &[String], memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        if let Some(v) = memo[a.len()][b.len()] {
            return v;
        }
        let v = if a[a.len() - 1] == b[b.len() - 1] {
            1 + lcs(&a[..a.len() - 1], &b[..b.len() - 1], memo)
        } else {
            lcs(&a[..a.len() - 1], b, memo).max(lcs(a, &b[..b.len() - 1], memo))
        };
        memo[a.len()][b.len()] = Some(v);
        v
    }

    pub fn rouge_l(c: &[String], r: &[String]) -> f64 {
        let mut memo = vec![vec![None; r.len() + 1]; c.len() + 1];
        let l = lcs(c, r, &mut memo) as f64;
        if c.is_empty() || l == 0.0 {
            return 0.0;
        }
        let (rec, prec) = (l / r.len() as f64, l / c.len() as f64);
        let b2 = 1.2 * 1.2;
        (1.0 + b2) * rec * prec / (rec + b2 * prec)
    }

    pub fn rouge_l_corpus(cands: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
        let mut sum = 0.0;
        for (c, r) in cands.iter().zip(refs) {
            sum += rouge_l(c, r);
        }
        sum / refs.len() as f64
    }

    /// Sorted `(gram, tf·idf)` pairs.
    fn vector(tokens: &[String], n: usize, refs: &[Vec<String>]) -> Vec<(Vec<String>, f64)> {
        let all = grams(tokens, n);
        unique(all.clone())
            .into_iter()
            .map(|g| {
                let df = refs.iter().filter(|r| count(&grams(r, n), &g) > 0).count().max(1);
                let idf = (refs.len() as f64 / df as f64).ln();
                let w = count(&all, &g) as f64 * idf;
                (g, w)
            })
            .collect()
    }

    fn cosine(a: &[(Vec<String>, f64)], b: &[(Vec<String>, f64)]) -> f64 {
        let na = a.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = a
            .iter()
            .filter_map(|(g, v)| b.iter().find(|(h, _)| h == g).map(|(_, w)| v * w))
            .sum();
        dot / (na * nb)
    }

    pub fn cider(cands: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
        let mut total = 0.0;
        for n in 1..=4 {
            let mut sum = 0.0;
            for (c, r) in cands.iter().zip(refs) {
                sum += cosine(&vector(c, n, refs), &vector(r, n, refs));
            }
            total += sum / cands.len() as f64;
        }
        10.0 * total / 4.0
    }
}

/// Best complete sequence by exhaustive search, ranked like the beam: score, then ids.
pub fn exhaustive(session: &Session<'_>, max_len: usize) -> (Vec<usize>, f64) {
    fn go(
        session: &Session<'_>,
        max_len: usize,
        ids: &mut Vec<usize>,
        state: &RecurrentState,
        lp: f64,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if *ids.last().unwrap() == EOS || ids.len() == max_len + 2 {
            let better = match best {
                None => true,
                Some((b_ids, b_lp)) => lp > *b_lp || (lp == *b_lp && *ids < *b_ids),
            };
            if better {
                *best = Some((ids.clone(), lp));
            }
            return;
        }
        let (logp, next) = session.step(state, *ids.last().unwrap()).unwrap();
        for tok in 0..logp.len() {
            if tok == PAD || tok == SOS {
                continue;
            }
            ids.push(tok);
            go(session, max_len, ids, &next, lp + logp[tok], best);
            ids.pop();
        }
    }
    let mut best = None;
    go(session, max_len, &mut vec![SOS], &session.initial_state(), 0.0, &mut best);
    best.unwrap()
}

