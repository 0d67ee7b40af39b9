//! Forward and backward passes.
//!
//! Each decoding step `t` feeds token `y_{t-1}` to the encoder LSTM, builds
//! the decoder input from the fresh encoder state (plus audio, per fusion
//! mode), advances the decoder LSTM and emits `softmax(W_d h_dec + b_d)`.
//! The attention query is therefore the latest encoder state available when
//! predicting `y_t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExtractorKind, Fusion, ModelConfig};
use super::params::{AttentionWeights, ModelParams, Weights};
use crate::audiofeat::{mean_pool, ChunkSet, FeatureSequence, FrontendCache, TrackEmbedding};
use crate::error::{Error, Result};
use crate::numcore::{
    dot, dropout_mask, log_softmax, lstm_cell, lstm_cell_backward, softmax, LstmCache, Matrix,
};
use crate::text::{pad_batch, EmbeddingTable, TokenSequence, EOS, SOS};

/// Audio as the model consumes it: precomputed chunk features for the
/// frozen extractor, raw chunked frames for the trainable one.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioInput {
    Features(FeatureSequence),
    Chunks(ChunkSet),
}

/// One training/evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub audio: AudioInput,
    pub caption: TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(n: usize) -> Self {
        Self {
            hidden: vec![0.0; n],
            cell: vec![0.0; n],
        }
    }

    fn from_cache(c: &LstmCache) -> Self {
        Self {
            hidden: c.h.clone(),
            cell: c.c.clone(),
        }
    }
}

pub type EncoderState = LstmState;
pub type DecoderState = LstmState;

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub encoder: EncoderState,
    pub decoder: DecoderState,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub embeddings: EmbeddingTable,
}

/// Audio-derived quantities shared by every step of one sequence.
pub(crate) struct AudioContext {
    features: Matrix,
    chunks: Option<ChunkSet>,
    frontend: Option<FrontendCache>,
    pooled: Vec<f64>,
    /// Early: `d`-vector; late: `H_enc`-vector; attention: empty.
    projected: Vec<f64>,
    /// Attention: row `i` is `W_a a_i`.
    keys: Option<Matrix>,
}

struct AttentionStep {
    /// Row `i` is `tanh(W_a a_i + W_h h_enc)`.
    z: Matrix,
    beta: Vec<f64>,
}

struct StepTrace {
    enc: LstmCache,
    attention: Option<AttentionStep>,
    dec_mask: Option<Vec<f64>>,
    dec: LstmCache,
    logits: Vec<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, embeddings: EmbeddingTable, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Weights::init(&config, &mut rng);
        Self::from_weights(config, weights, embeddings)
    }

    pub fn from_weights(config: ModelConfig, weights: Weights, embeddings: EmbeddingTable) -> Result<Self> {
        config.validate()?;
        embeddings
            .table
            .check_shape("Model::new", "embeddings", config.vocab_size, config.embed_dim)?;
        let expected = Weights::zeros(&config);
        let got = weights.tensors();
        let want = expected.tensors();
        if got.len() != want.len() {
            return Err(Error::shape("Model::new", "parameter set", want.len(), got.len()));
        }
        for ((gn, gm), (wn, wm)) in got.iter().zip(&want) {
            if gn != wn || gm.shape() != wm.shape() {
                return Err(Error::shape(
                    "Model::new",
                    *wn,
                    format!("{:?}", wm.shape()),
                    format!("{gn} {:?}", gm.shape()),
                ));
            }
        }
        Ok(Self {
            config,
            params: ModelParams::new(weights),
            embeddings,
        })
    }

    pub fn weights(&self) -> &Weights {
        &self.params.value
    }

    pub(crate) fn audio_context(&self, audio: &AudioInput) -> Result<AudioContext> {
        let cfg = &self.config;
        let w = self.weights();
        let (features, chunks, frontend) = match (audio, cfg.extractor) {
            (AudioInput::Features(fs), ExtractorKind::FrozenFile) => (fs.features.clone(), None, None),
            (AudioInput::Chunks(cs), ExtractorKind::Trainable) => {
                let conv = w.frontend.as_ref().expect("trainable model has a frontend");
                let (fs, cache) = conv.forward(cs)?;
                (fs.features, Some(cs.clone()), Some(cache))
            }
            (AudioInput::Features(_), ExtractorKind::Trainable) => {
                return Err(Error::Config("trainable extractor needs raw chunks, got features".into()))
            }
            (AudioInput::Chunks(_), ExtractorKind::FrozenFile) => {
                return Err(Error::Config("file-backed extractor needs features, got raw chunks".into()))
            }
        };
        if features.rows() == 0 {
            return Err(Error::Argument("audio has no chunks".into()));
        }
        features.check_shape("audio input", "features", features.rows(), cfg.feature_dim)?;

        let pooled = mean_pool(&FeatureSequence::new(features.clone()))?.0;
        let projected = match cfg.fusion {
            Fusion::Early => w.early_proj.as_ref().expect("early").apply(&pooled),
            Fusion::Late => w.late_proj.as_ref().expect("late").apply(&pooled),
            Fusion::Attention => Vec::new(),
        };
        let keys = w.attention.as_ref().map(|att| {
            let rows: Vec<Vec<f64>> = features.iter_rows().map(|a| att.w_audio.matvec(a)).collect();
            Matrix::from_rows(&rows).expect("uniform rows")
        });
        Ok(AudioContext {
            features,
            chunks,
            frontend,
            pooled,
            projected,
            keys,
        })
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState {
            encoder: LstmState::zeros(self.config.hidden_enc),
            decoder: LstmState::zeros(self.config.hidden_dec),
        }
    }

    fn step(
        &self,
        ctx: &AudioContext,
        state: &RecurrentState,
        token: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StepTrace> {
        let cfg = &self.config;
        let w = self.weights();
        if token >= cfg.vocab_size {
            return Err(Error::Argument(format!("token id {token} outside vocabulary of {}", cfg.vocab_size)));
        }
        let (word_mask, dec_mask) = match rng {
            Some(rng) if cfg.dropout > 0.0 => (
                Some(dropout_mask(cfg.embed_dim, cfg.dropout, rng)?),
                Some(dropout_mask(cfg.decoder_input_dim(), cfg.dropout, rng)?),
            ),
            _ => (None, None),
        };

        let mut word = self.embeddings.row(token).to_vec();
        if let Some(m) = &word_mask {
            word.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
        }
        let x_enc = match cfg.fusion {
            Fusion::Early => [ctx.projected.as_slice(), &word].concat(),
            Fusion::Late | Fusion::Attention => word,
        };
        let enc = lstm_cell(&x_enc, &state.encoder.hidden, &state.encoder.cell, &w.encoder)?;

        let (mut x_dec, attention) = match cfg.fusion {
            Fusion::Early => (enc.h.clone(), None),
            Fusion::Late => ([ctx.projected.as_slice(), &enc.h].concat(), None),
            Fusion::Attention => {
                let att = w.attention.as_ref().expect("attention");
                let keys = ctx.keys.as_ref().expect("attention keys");
                let (attended, step) = attend_with_keys(&ctx.features, keys, &enc.h, att)?;
                ([attended.as_slice(), &enc.h].concat(), Some(step))
            }
        };
        if let Some(m) = &dec_mask {
            x_dec.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
        }
        let dec = lstm_cell(&x_dec, &state.decoder.hidden, &state.decoder.cell, &w.decoder)?;
        let logits = w.output.apply(&dec.h);
        Ok(StepTrace {
            enc,
            attention,
            dec_mask,
            dec,
            logits,
        })
    }

    /// One encoder LSTM step on an embedded word. `audio` must be present
    /// exactly when the model uses early fusion.
    pub fn encoder_step(
        &self,
        word: &[f64],
        audio: Option<&TrackEmbedding>,
        state: &EncoderState,
    ) -> Result<EncoderState> {
        let w = self.weights();
        let x = match (self.config.fusion, audio) {
            (Fusion::Early, Some(a)) => {
                let proj = w.early_proj.as_ref().expect("early");
                if a.0.len() != self.config.feature_dim {
                    return Err(Error::shape("encoder_step", "audio", self.config.feature_dim, a.0.len()));
                }
                [proj.apply(&a.0).as_slice(), word].concat()
            }
            (Fusion::Early, None) => {
                return Err(Error::Config("early fusion needs the track embedding at every encoder step".into()))
            }
            (mode, Some(_)) => {
                return Err(Error::Config(format!("{mode} fusion keeps audio out of the encoder")))
            }
            (_, None) => word.to_vec(),
        };
        if word.len() != self.config.embed_dim {
            return Err(Error::shape("encoder_step", "word", self.config.embed_dim, word.len()));
        }
        let c = lstm_cell(&x, &state.hidden, &state.cell, &w.encoder)?;
        Ok(LstmState::from_cache(&c))
    }

    /// One decoder step on a prebuilt decoder input. Returns the output
    /// distribution over the vocabulary and the new decoder state.
    pub fn decoder_step(&self, x_dec: &[f64], state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        let want = self.config.decoder_input_dim();
        if x_dec.len() != want {
            return Err(Error::shape(
                "decoder_step",
                format!("x_dec ({} fusion)", self.config.fusion),
                want,
                x_dec.len(),
            ));
        }
        let w = self.weights();
        let c = lstm_cell(x_dec, &state.hidden, &state.cell, &w.decoder)?;
        let probs = softmax(&w.output.apply(&c.h))?;
        Ok((probs, LstmState::from_cache(&c)))
    }

    /// Prepares audio once for step-by-step scoring or decoding.
    pub fn session(&self, audio: &AudioInput) -> Result<Session<'_>> {
        Ok(Session {
            model: self,
            ctx: self.audio_context(audio)?,
        })
    }

    /// Teacher-forced forward over one padded caption. Returns the summed
    /// negative log-likelihood and number of scored positions; when `grads`
    /// is given, accumulates `scale ×` the gradient of that sum.
    fn sequence_nll(
        &self,
        audio: &AudioInput,
        ids: &[usize],
        mask: &[bool],
        mut rng: Option<ChaCha8Rng>,
        grads: Option<(&mut Weights, f64)>,
    ) -> Result<(f64, usize)> {
        let ctx = self.audio_context(audio)?;
        // Masked positions sit at the tail; nothing past the last scored
        // target can influence the loss.
        let steps = mask.iter().rposition(|&m| m).unwrap_or(0);
        let mut state = self.initial_state();
        let mut traces = Vec::with_capacity(steps);
        let mut nll = 0.0;
        let mut count = 0;
        for t in 0..steps {
            let tr = self.step(&ctx, &state, ids[t], rng.as_mut())?;
            if mask[t + 1] {
                let target = ids[t + 1];
                if target >= self.config.vocab_size {
                    return Err(Error::Argument(format!("target id {target} outside vocabulary")));
                }
                nll -= log_softmax(&tr.logits)?[target];
                count += 1;
            }
            state = RecurrentState {
                encoder: LstmState::from_cache(&tr.enc),
                decoder: LstmState::from_cache(&tr.dec),
            };
            traces.push(tr);
        }
        if let Some((g, scale)) = grads {
            self.backward(&ctx, &traces, &ids[1..=steps], &mask[1..=steps], scale, g)?;
        }
        Ok((nll, count))
    }

    fn backward(
        &self,
        ctx: &AudioContext,
        traces: &[StepTrace],
        targets: &[usize],
        scored: &[bool],
        scale: f64,
        g: &mut Weights,
    ) -> Result<()> {
        let cfg = &self.config;
        let w = self.weights();
        let (he, hd, k, d) = (cfg.hidden_enc, cfg.hidden_dec, cfg.feature_dim, cfg.embed_dim);
        let chunks_len = ctx.features.rows();
        let need_dfeat = ctx.frontend.is_some();

        let mut dh_enc_next = vec![0.0; he];
        let mut dc_enc_next = vec![0.0; he];
        let mut dh_dec_next = vec![0.0; hd];
        let mut dc_dec_next = vec![0.0; hd];
        let mut d_projected = vec![0.0; ctx.projected.len()];
        let mut d_keys = Matrix::zeros(chunks_len, hd);
        let mut d_features = Matrix::zeros(chunks_len, k);

        for (t, tr) in traces.iter().enumerate().rev() {
            let mut dh_dec = std::mem::take(&mut dh_dec_next);
            if scored[t] {
                let mut dlogits = softmax(&tr.logits)?;
                dlogits[targets[t]] -= 1.0;
                dlogits.iter_mut().for_each(|v| *v *= scale);
                g.output.weight.add_outer(&dlogits, &tr.dec.h);
                g.output.bias.add_slice(&dlogits);
                w.output.weight.matvec_t_acc(&dlogits, &mut dh_dec);
            }
            let dec_g = lstm_cell_backward(&tr.dec, &dh_dec, &dc_dec_next, &w.decoder, &mut g.decoder);
            dh_dec_next = dec_g.dh_prev;
            dc_dec_next = dec_g.dc_prev;
            let mut dx_dec = dec_g.dx;
            if let Some(m) = &tr.dec_mask {
                dx_dec.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
            }

            let mut dh_enc = std::mem::take(&mut dh_enc_next);
            let add = |dst: &mut [f64], src: &[f64]| dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            match cfg.fusion {
                Fusion::Early => add(&mut dh_enc, &dx_dec),
                Fusion::Late => {
                    add(&mut d_projected, &dx_dec[..he]);
                    add(&mut dh_enc, &dx_dec[he..]);
                }
                Fusion::Attention => {
                    let (d_attended, d_h) = dx_dec.split_at(k);
                    add(&mut dh_enc, d_h);
                    attention_backward(
                        w.attention.as_ref().expect("attention"),
                        g.attention.as_mut().expect("attention grads"),
                        &ctx.features,
                        tr.attention.as_ref().expect("attention trace"),
                        &tr.enc.h,
                        d_attended,
                        &mut dh_enc,
                        &mut d_keys,
                        need_dfeat.then_some(&mut d_features),
                    );
                }
            }

            let enc_g = lstm_cell_backward(&tr.enc, &dh_enc, &dc_enc_next, &w.encoder, &mut g.encoder);
            dh_enc_next = enc_g.dh_prev;
            dc_enc_next = enc_g.dc_prev;
            if cfg.fusion == Fusion::Early {
                // The word half of the encoder input feeds the frozen embedding table.
                add(&mut d_projected, &enc_g.dx[..d]);
            }
        }

        let pooled_grad = |proj: &super::params::Linear, gp: &mut super::params::Linear| {
            gp.weight.add_outer(&d_projected, &ctx.pooled);
            gp.bias.add_slice(&d_projected);
            proj.weight.matvec_t(&d_projected)
        };
        let d_pooled = match cfg.fusion {
            Fusion::Early => Some(pooled_grad(
                w.early_proj.as_ref().expect("early"),
                g.early_proj.as_mut().expect("early grads"),
            )),
            Fusion::Late => Some(pooled_grad(
                w.late_proj.as_ref().expect("late"),
                g.late_proj.as_mut().expect("late grads"),
            )),
            Fusion::Attention => {
                let att = w.attention.as_ref().expect("attention");
                let ga = g.attention.as_mut().expect("attention grads");
                for i in 0..chunks_len {
                    ga.w_audio.add_outer(d_keys.row(i), ctx.features.row(i));
                    if need_dfeat {
                        att.w_audio.matvec_t_acc(d_keys.row(i), d_features.row_mut(i));
                    }
                }
                None
            }
        };

        if let (Some(conv), Some(cache), Some(chunks)) =
            (w.frontend.as_ref(), ctx.frontend.as_ref(), ctx.chunks.as_ref())
        {
            if let Some(dp) = d_pooled {
                for i in 0..chunks_len {
                    for (a, b) in d_features.row_mut(i).iter_mut().zip(&dp) {
                        *a += b / chunks_len as f64;
                    }
                }
            }
            conv.backward(chunks, cache, &d_features, g.frontend.as_mut().expect("frontend grads"));
        }
        Ok(())
    }

    /// Masked mean cross-entropy over a batch of teacher-forced captions.
    ///
    /// `dropout_seed = None` evaluates without dropout. When `grads` is given,
    /// the gradient of the mean loss is added to it; per-item gradients are
    /// computed in parallel and summed in item order.
    pub fn batch_loss(
        &self,
        batch: &[&Example],
        dropout_seed: Option<u64>,
        grads: Option<&mut Weights>,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        for ex in batch {
            if ex.caption.ids.len() < 2 || ex.caption.ids[0] != SOS {
                return Err(Error::Argument(format!("caption of `{}` is not <sos>-framed", ex.id)));
            }
        }
        let captions: Vec<&TokenSequence> = batch.iter().map(|e| &e.caption).collect();
        let (ids, masks) = pad_batch(&captions);
        // Position 0 (<sos>) is an input only.
        let total: usize = masks.iter().map(|m| m[1..].iter().filter(|&&b| b).count()).sum();
        let scale = 1.0 / total as f64;

        let seeds: Vec<Option<u64>> = match dropout_seed {
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                batch.iter().map(|_| Some(rng.random())).collect()
            }
            None => vec![None; batch.len()],
        };
        let want_grads = grads.is_some();
        let results: Vec<(f64, Option<Weights>)> = batch
            .par_iter()
            .zip(ids.par_iter().zip(masks.par_iter()))
            .zip(seeds.par_iter())
            .map(|((ex, (ids, mask)), seed)| {
                let rng = seed.map(ChaCha8Rng::seed_from_u64);
                let mut local = want_grads.then(|| self.weights().zeros_like());
                let (nll, _) =
                    self.sequence_nll(&ex.audio, ids, mask, rng, local.as_mut().map(|g| (g, scale)))?;
                Ok((nll, local))
            })
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} for batch [{}]", batch_ids(batch))),
                other => other,
            })?;

        let mut sum = 0.0;
        let mut acc = grads;
        for (nll, local) in results {
            sum += nll;
            if let (Some(g), Some(l)) = (acc.as_deref_mut(), local) {
                g.add_assign(&l);
            }
        }
        let loss = sum * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss for batch [{}]", batch_ids(batch))));
        }
        Ok(loss)
    }

    /// `Σ_t log P(y_t | y_<t, audio)` over a framed caption, `<eos>` included.
    pub fn sequence_logprob(&self, audio: &AudioInput, caption: &TokenSequence) -> Result<f64> {
        if caption.ids.len() < 2 || caption.ids[0] != SOS {
            return Err(Error::Argument("caption must start with <sos> and hold at least one target".into()));
        }
        let session = self.session(audio)?;
        let mut state = self.initial_state();
        let mut total = 0.0;
        for pair in caption.ids.windows(2) {
            let (logp, next) = session.step(&state, pair[0])?;
            total += logp[pair[1]];
            state = next;
        }
        Ok(total)
    }

    /// Teacher-forced attention weights, one row per decoding step (`T × L`).
    pub fn attention_trace(&self, audio: &AudioInput, caption: &TokenSequence) -> Result<Matrix> {
        if self.config.fusion != Fusion::Attention {
            return Err(Error::Config("attention trace needs attention mode".into()));
        }
        let session = self.session(audio)?;
        let mut state = self.initial_state();
        let mut rows = Vec::new();
        for &tok in caption.ids.iter().take_while(|&&t| t != EOS) {
            let tr = self.step(&session.ctx, &state, tok, None)?;
            rows.push(tr.attention.expect("attention mode").beta);
            state = RecurrentState {
                encoder: LstmState::from_cache(&tr.enc),
                decoder: LstmState::from_cache(&tr.dec),
            };
        }
        Matrix::from_rows(&rows)
    }
}

/// A model bound to one audio input, stepping one token at a time.
pub struct Session<'m> {
    model: &'m Model,
    ctx: AudioContext,
}

impl Session<'_> {
    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn initial_state(&self) -> RecurrentState {
        self.model.initial_state()
    }

    /// Feeds `token`; returns log-probabilities of the next token and the new state.
    pub fn step(&self, state: &RecurrentState, token: usize) -> Result<(Vec<f64>, RecurrentState)> {
        let tr = self.model.step(&self.ctx, state, token, None)?;
        let logp = log_softmax(&tr.logits)?;
        Ok((
            logp,
            RecurrentState {
                encoder: LstmState::from_cache(&tr.enc),
                decoder: LstmState::from_cache(&tr.dec),
            },
        ))
    }
}

fn batch_ids(batch: &[&Example]) -> String {
    batch.iter().map(|e| e.id.as_str()).collect::<Vec<_>>().join(", ")
}

/// Soft attention over chunk features `A` (`L × k`) queried by `h_enc`.
/// Returns the attended vector `Σ β_i a_i` and the weights `β`.
pub fn attend(features: &Matrix, h_enc: &[f64], w: &AttentionWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    if features.rows() == 0 {
        return Err(Error::Argument("attention over zero chunks".into()));
    }
    features.check_shape("attend", "features", features.rows(), w.w_audio.cols())?;
    if h_enc.len() != w.w_hidden.cols() {
        return Err(Error::shape("attend", "h_enc", w.w_hidden.cols(), h_enc.len()));
    }
    let rows: Vec<Vec<f64>> = features.iter_rows().map(|a| w.w_audio.matvec(a)).collect();
    let keys = Matrix::from_rows(&rows)?;
    let (attended, step) = attend_with_keys(features, &keys, h_enc, w)?;
    Ok((attended, step.beta))
}

/// Gradients of `attend` for an upstream gradient `d_attended` on `â`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendGrads {
    pub weights: AttentionWeights,
    pub h_enc: Vec<f64>,
    pub features: Matrix,
}

pub fn attend_backward(features: &Matrix, h_enc: &[f64], w: &AttentionWeights, d_attended: &[f64]) -> Result<AttendGrads> {
    if d_attended.len() != features.cols() {
        return Err(Error::shape("attend_backward", "d_attended", features.cols(), d_attended.len()));
    }
    let rows: Vec<Vec<f64>> = features.iter_rows().map(|a| w.w_audio.matvec(a)).collect();
    let keys = Matrix::from_rows(&rows)?;
    let (_, step) = attend_with_keys(features, &keys, h_enc, w)?;
    let mut g = AttentionWeights::zeros(w.w_hidden.rows(), features.cols(), h_enc.len());
    let mut dh = vec![0.0; h_enc.len()];
    let mut d_keys = Matrix::zeros(keys.rows(), keys.cols());
    let mut d_features = Matrix::zeros(features.rows(), features.cols());
    attention_backward(w, &mut g, features, &step, h_enc, d_attended, &mut dh, &mut d_keys, Some(&mut d_features));
    for (i, dk) in d_keys.iter_rows().enumerate() {
        g.w_audio.add_outer(dk, features.row(i));
        w.w_audio.matvec_t_acc(dk, d_features.row_mut(i));
    }
    Ok(AttendGrads {
        weights: g,
        h_enc: dh,
        features: d_features,
    })
}

fn attend_with_keys(
    features: &Matrix,
    keys: &Matrix,
    h_enc: &[f64],
    w: &AttentionWeights,
) -> Result<(Vec<f64>, AttentionStep)> {
    let query = w.w_hidden.matvec(h_enc);
    let mut z = keys.clone();
    let mut scores = Vec::with_capacity(keys.rows());
    for i in 0..keys.rows() {
        let row = z.row_mut(i);
        for (v, q) in row.iter_mut().zip(&query) {
            *v = (*v + q).tanh();
        }
        scores.push(dot(w.score.as_slice(), row));
    }
    let beta = softmax(&scores)?;
    let mut attended = vec![0.0; features.cols()];
    for (a, &b) in features.iter_rows().zip(&beta) {
        for (o, v) in attended.iter_mut().zip(a) {
            *o += b * v;
        }
    }
    Ok((attended, AttentionStep { z, beta }))
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    w: &AttentionWeights,
    g: &mut AttentionWeights,
    features: &Matrix,
    step: &AttentionStep,
    h_enc: &[f64],
    d_attended: &[f64],
    dh_enc: &mut [f64],
    d_keys: &mut Matrix,
    d_features: Option<&mut Matrix>,
) {
    let d_beta: Vec<f64> = features.iter_rows().map(|a| dot(a, d_attended)).collect();
    if let Some(df) = d_features {
        for (i, &b) in step.beta.iter().enumerate() {
            for (o, v) in df.row_mut(i).iter_mut().zip(d_attended) {
                *o += b * v;
            }
        }
    }
    let mean: f64 = step.beta.iter().zip(&d_beta).map(|(b, d)| b * d).sum();
    let mut d_query = vec![0.0; w.w_hidden.rows()];
    let score = w.score.as_slice();
    for (i, (&b, &db)) in step.beta.iter().zip(&d_beta).enumerate() {
        let de = b * (db - mean);
        if de == 0.0 {
            continue;
        }
        let z = step.z.row(i);
        g.score.add_slice(&z.iter().map(|v| de * v).collect::<Vec<_>>());
        let dk = d_keys.row_mut(i);
        for j in 0..z.len() {
            let du = de * score[j] * (1.0 - z[j] * z[j]);
            dk[j] += du;
            d_query[j] += du;
        }
    }
    g.w_hidden.add_outer(&d_query, h_enc);
    w.w_hidden.matvec_t_acc(&d_query, dh_enc);
}
