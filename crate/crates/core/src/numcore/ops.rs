use rand::Rng;

use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// `log softmax(logits)`, computed without forming the probabilities.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Argument("log_softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log_softmax logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&v| v - lse).collect())
}

/// Mean negative log-likelihood over the unmasked positions.
///
/// `mask[t] == true` marks a position that counts; padding positions are
/// `false` and are excluded from both the sum and the denominator.
pub fn cross_entropy(pred: &[Vec<f64>], targets: &[usize], mask: &[bool]) -> Result<f64> {
    if pred.len() != targets.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "cross_entropy",
            "targets/mask",
            pred.len(),
            format!("{}/{}", targets.len(), mask.len()),
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, ((p, &y), &keep)) in pred.iter().zip(targets).zip(mask).enumerate() {
        if !keep {
            continue;
        }
        let prob = *p.get(y).ok_or_else(|| {
            Error::Argument(format!("target id {y} at position {t} outside {} classes", p.len()))
        })?;
        total -= prob.ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Argument("cross_entropy with every position masked".into()));
    }
    Ok(total / count as f64)
}

/// Inverted-dropout scaling vector: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}
