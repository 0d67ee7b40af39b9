use std::cmp::Ordering;

use super::forward::{AudioInput, Model, RecurrentState, Session};
use crate::error::{Error, Result};
use crate::text::{EOS, PAD, SOS};

/// A partial or finished caption. `ids` starts with `<sos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeHypothesis {
    pub ids: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
}

impl DecodeHypothesis {
    /// Generated tokens with `<sos>` and a trailing `<eos>` removed.
    pub fn content(&self) -> &[usize] {
        let body = &self.ids[1.min(self.ids.len())..];
        match body.last() {
            Some(&EOS) => &body[..body.len() - 1],
            _ => body,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub best: DecodeHypothesis,
    /// Completed hypotheses, best first.
    pub completed: Vec<DecodeHypothesis>,
    /// Unfinished hypotheses still on the beam when the search stopped.
    pub beam: Vec<DecodeHypothesis>,
}

fn is_candidate(token: usize) -> bool {
    token != PAD && token != SOS
}

fn is_finished(ids: &[usize], max_len: usize) -> bool {
    ids.last() == Some(&EOS) || ids.len() >= max_len + 2
}

/// Higher log-probability first; ties go to the lexicographically smaller ids.
fn rank(a: &DecodeHypothesis, b: &DecodeHypothesis) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.ids.cmp(&b.ids))
}

/// Picks the most likely token at every step, ties toward the lowest id.
pub fn greedy_decode(model: &Model, audio: &AudioInput, max_len: usize) -> Result<DecodeHypothesis> {
    let session = model.session(audio)?;
    let mut state = session.initial_state();
    let mut hyp = DecodeHypothesis {
        ids: vec![SOS],
        logprob: 0.0,
        finished: false,
    };
    while !hyp.finished {
        let (logp, next) = session.step(&state, *hyp.ids.last().expect("non-empty"))?;
        let mut best: Option<usize> = None;
        for (tok, &lp) in logp.iter().enumerate() {
            if is_candidate(tok) && best.is_none_or(|b| lp > logp[b]) {
                best = Some(tok);
            }
        }
        let tok = best.expect("vocabulary has candidates");
        hyp.ids.push(tok);
        hyp.logprob += logp[tok];
        hyp.finished = is_finished(&hyp.ids, max_len);
        state = next;
    }
    Ok(hyp)
}

struct Live {
    hyp: DecodeHypothesis,
    state: RecurrentState,
}

fn expand(session: &Session<'_>, live: &Live, width: usize, out: &mut Vec<(DecodeHypothesis, RecurrentState)>) -> Result<()> {
    let (logp, next) = session.step(&live.state, *live.hyp.ids.last().expect("non-empty"))?;
    let mut tokens: Vec<usize> = (0..logp.len()).filter(|&t| is_candidate(t)).collect();
    tokens.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
    for tok in tokens.into_iter().take(width) {
        let mut ids = live.hyp.ids.clone();
        ids.push(tok);
        out.push((
            DecodeHypothesis {
                finished: false,
                logprob: live.hyp.logprob + logp[tok],
                ids,
            },
            next.clone(),
        ));
    }
    Ok(())
}

/// Beam search over summed log-probabilities, without length normalisation.
///
/// Finished hypotheses leave the beam for a completed pool and the beam is
/// refilled from the remaining candidates. Search ends once the beam is empty
/// or the best completed score beats every live hypothesis, since scores can
/// only fall as hypotheses grow.
pub fn beam_decode(model: &Model, audio: &AudioInput, beam_size: usize, max_len: usize) -> Result<BeamResult> {
    if beam_size == 0 {
        return Err(Error::Argument("beam size must be at least 1".into()));
    }
    let session = model.session(audio)?;
    let mut beam = vec![Live {
        hyp: DecodeHypothesis {
            ids: vec![SOS],
            logprob: 0.0,
            finished: false,
        },
        state: session.initial_state(),
    }];
    let mut completed: Vec<DecodeHypothesis> = Vec::new();

    while !beam.is_empty() {
        let mut candidates = Vec::new();
        for live in &beam {
            // One spare per parent, so a finished candidate never starves the beam.
            expand(&session, live, beam_size + 1, &mut candidates)?;
        }
        candidates.sort_by(|a, b| rank(&a.0, &b.0));

        let mut next = Vec::with_capacity(beam_size);
        for (mut hyp, state) in candidates {
            if next.len() == beam_size {
                break;
            }
            hyp.finished = is_finished(&hyp.ids, max_len);
            if hyp.finished {
                completed.push(hyp);
            } else {
                next.push(Live { hyp, state });
            }
        }
        beam = next;

        let best_done = completed.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = beam.iter().map(|l| l.hyp.logprob).fold(f64::NEG_INFINITY, f64::max);
        if best_done > best_live {
            break;
        }
    }

    completed.sort_by(rank);
    let mut beam: Vec<DecodeHypothesis> = beam.into_iter().map(|l| l.hyp).collect();
    beam.sort_by(rank);
    let best = completed
        .first()
        .or(beam.first())
        .cloned()
        .expect("search yields at least one hypothesis");
    Ok(BeamResult { best, completed, beam })
}
