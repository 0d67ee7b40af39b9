//! Teacher-forced training: masked cross-entropy, Adam, linear learning-rate
//! decay, dropout, optional gradient clipping and early stopping on
//! validation loss.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiofeat::{ChunkSet, FeatureSequence};
use crate::error::{Error, Result};
use crate::model::{AudioInput, Example, ExtractorKind, Fusion, Model, ModelConfig, ReferenceLoss, Weights};
use crate::numcore::{clip_grad_norm, AdamState, Differentiable, DoubleDouble, Matrix, ParamTensor};
use crate::text::{EmbeddingTable, TokenSequence, SPECIAL_TOKENS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub patience: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            max_epochs: 200,
            batch_size: 16,
            dropout: 0.25,
            patience: 10,
            max_len: 22,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr {} must be positive", self.initial_lr)));
        }
        for (name, v) in [
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Teacher-forced next-token accuracy on the validation split.
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Weights,
    pub log: Vec<EpochStats>,
    /// Optimizer steps taken.
    pub steps: u64,
}

/// Learning rate for `epoch`, decaying linearly from `initial_lr` to zero at `max_epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.initial_lr * (1.0 - epoch as f64 / cfg.max_epochs as f64)
}

/// Masked mean cross-entropy with ground-truth inputs; adds the gradient to
/// `model.params.grad`. Frozen parts (embeddings, file-backed features) get none.
pub fn teacher_forced_loss(model: &mut Model, batch: &[&Example], dropout_seed: Option<u64>) -> Result<f64> {
    let mut g = model.weights().zeros_like();
    let loss = model.batch_loss(batch, dropout_seed, Some(&mut g))?;
    model.params.grad.add_assign(&g);
    Ok(loss)
}

/// Mean loss without dropout, over all scored tokens of `examples`.
pub fn evaluate_loss(model: &Model, examples: &[Example]) -> Result<f64> {
    let refs: Vec<&Example> = examples.iter().collect();
    model.batch_loss(&refs, None, None)
}

/// Fraction of teacher-forced positions where the most likely next token is the target.
pub fn next_token_accuracy(model: &Model, examples: &[Example]) -> Result<f64> {
    use rayon::prelude::*;
    let counts: Vec<(usize, usize)> = examples
        .par_iter()
        .map(|ex| {
            let session = model.session(&ex.audio)?;
            let mut state = session.initial_state();
            let mut hits = 0;
            for pair in ex.caption.ids.windows(2) {
                let (logp, next) = session.step(&state, pair[0])?;
                let mut best = 0;
                for (t, &lp) in logp.iter().enumerate() {
                    if lp > logp[best] {
                        best = t;
                    }
                }
                hits += usize::from(best == pair[1]);
                state = next;
            }
            Ok((hits, ex.caption.ids.len() - 1))
        })
        .collect::<Result<_>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |(h, n), (a, b)| (h + a, n + b));
    if total == 0 {
        return Err(Error::Argument("no positions to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Trains `model` in place and returns the best-validation parameters with
/// the per-epoch log. `on_epoch` sees every epoch's stats and the current
/// model, plus whether validation loss improved (for checkpointing).
pub fn train_loop<F>(
    model: &mut Model,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &Model, bool) -> Result<()>,
{
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    let train_ids: HashSet<&str> = train.iter().map(|e| e.id.as_str()).collect();
    if let Some(dup) = val.iter().find(|e| train_ids.contains(e.id.as_str())) {
        return Err(Error::Data(format!("`{}` appears in both training and validation splits", dup.id)));
    }
    model.config.dropout = cfg.dropout;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best = model.weights().clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut steps = 0u64;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let seed: u64 = rng.random();
            model.params.zero_grad();
            loss_sum += teacher_forced_loss(model, &batch, Some(seed))?;
            let mut tensors = model.params.tensors_mut();
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut tensors, c);
            }
            adam.step(&mut tensors, lr)?;
            batches += 1;
            steps += 1;
        }

        let val_loss = evaluate_loss(model, val)?;
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_accuracy: next_token_accuracy(model, val)?,
        };
        let improved = val_loss < best_val;
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train {:.4} val {val_loss:.4}{}",
            stats.train_loss,
            if improved { " *" } else { "" }
        );
        on_epoch(&stats, model, improved)?;
        log.push(stats);
        if improved {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.weights().clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best_epoch,
        best_val_loss: best_val,
        best,
        log,
        steps,
    })
}

/// A model and a fixed batch, exposing the batch loss to the gradient checker.
pub struct LossProbe {
    pub model: Model,
    pub batch: Vec<Example>,
    /// Fixed dropout seed, so masks stay identical across evaluations.
    pub dropout_seed: Option<u64>,
    /// Evaluate finite differences with the double-double reference loss.
    /// In plain `f64` the difference quotient carries roundoff near
    /// `|f|·2⁻⁵²/ε`, which dominates entries whose gradient is below ~1e-6.
    pub extended_precision: bool,
}

impl LossProbe {
    fn value_mut(&mut self, param: usize, index: usize) -> &mut f64 {
        let (_, m) = self.model.params.value.tensors_mut().into_iter().nth(param).expect("parameter index");
        &mut m.as_mut_slice()[index]
    }
}

impl Differentiable for LossProbe {
    fn loss(&mut self) -> Result<f64> {
        let refs: Vec<&Example> = self.batch.iter().collect();
        self.model.batch_loss(&refs, self.dropout_seed, None)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let refs: Vec<&Example> = self.batch.iter().collect();
        teacher_forced_loss(&mut self.model, &refs, self.dropout_seed)
    }

    fn params_mut(&mut self) -> Vec<ParamTensor<'_>> {
        self.model.params.tensors_mut()
    }

    fn central_difference(&mut self, param: usize, index: usize, eps: f64) -> Result<f64> {
        if !self.extended_precision {
            let original = *self.value_mut(param, index);
            *self.value_mut(param, index) = original + eps;
            let plus = self.loss();
            *self.value_mut(param, index) = original - eps;
            let minus = self.loss();
            *self.value_mut(param, index) = original;
            return Ok((plus? - minus?) / (2.0 * eps));
        }
        let mut reference = ReferenceLoss::<DoubleDouble>::new(&self.model, &self.batch, self.dropout_seed);
        let original = reference.entry(param, index);
        reference.set_entry(param, index, original + DoubleDouble::new(eps));
        let plus = reference.loss();
        reference.set_entry(param, index, original - DoubleDouble::new(eps));
        let minus = reference.loss();
        Ok(((plus - minus) / DoubleDouble::new(2.0 * eps)).to_f64())
    }
}

/// Small-dimension model and two-caption batch for gradient checks:
/// `H = 8, V = 24, k = 6, d = 8, L = 3`, the longer caption spanning 5 steps.
pub fn small_probe(fusion: Fusion, extractor: ExtractorKind, seed: u64) -> Result<LossProbe> {
    const H: usize = 8;
    const V: usize = 24;
    const K: usize = 6;
    const D: usize = 8;
    const L: usize = 3;
    const F: usize = 4;
    const FRAMES: usize = 5;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        fusion,
        extractor,
        hidden_enc: H,
        hidden_dec: H,
        embed_dim: D,
        feature_dim: K,
        frame_dim: if extractor == ExtractorKind::Trainable { F } else { 0 },
        vocab_size: V,
        max_len: 4,
        dropout: 0.0,
    };
    let embeddings = EmbeddingTable {
        table: Matrix::uniform(V, D, 1.0, &mut rng),
        frozen: true,
    };
    let model = Model::new(config, embeddings, rng.random())?;

    let first = SPECIAL_TOKENS.len();
    let mut batch = Vec::new();
    for (i, content) in [4usize, 2].into_iter().enumerate() {
        let audio = match extractor {
            ExtractorKind::FrozenFile => AudioInput::Features(FeatureSequence::new(Matrix::uniform(L, K, 1.0, &mut rng))),
            ExtractorKind::Trainable => AudioInput::Chunks(ChunkSet {
                chunks: (0..L).map(|_| Matrix::uniform(FRAMES, F, 1.0, &mut rng)).collect(),
                chunk_seconds: 1.0,
            }),
        };
        let mut ids = vec![crate::text::SOS];
        ids.extend((0..content).map(|_| rng.random_range(first..V)));
        ids.push(crate::text::EOS);
        batch.push(Example {
            id: format!("probe-{i}"),
            audio,
            caption: TokenSequence::new(ids),
        });
    }
    Ok(LossProbe {
        model,
        batch,
        dropout_seed: None,
        extended_precision: true,
    })
}
