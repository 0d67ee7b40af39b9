use rand::Rng;

use super::config::{ExtractorKind, Fusion, ModelConfig};
use crate::audiofeat::ConvFrontend;
use crate::numcore::{LstmWeights, Matrix, ParamTensor};

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(out: usize, input: usize) -> Self {
        Self {
            weight: Matrix::zeros(out, input),
            bias: Matrix::zeros(out, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(out: usize, input: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::uniform(out, input, 1.0 / (input as f64).sqrt(), rng),
            bias: Matrix::zeros(out, 1),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (a, b) in y.iter_mut().zip(self.bias.as_slice()) {
            *a += b;
        }
        y
    }
}

/// Additive attention scorer `e_i = wᵀ tanh(W_a a_i + W_h h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `1 × H_dec`
    pub score: Matrix,
    /// `H_dec × k`
    pub w_audio: Matrix,
    /// `H_dec × H_enc`
    pub w_hidden: Matrix,
}

impl AttentionWeights {
    pub fn zeros(hidden_dec: usize, k: usize, hidden_enc: usize) -> Self {
        Self {
            score: Matrix::zeros(1, hidden_dec),
            w_audio: Matrix::zeros(hidden_dec, k),
            w_hidden: Matrix::zeros(hidden_dec, hidden_enc),
        }
    }

    pub fn init<R: Rng + ?Sized>(hidden_dec: usize, k: usize, hidden_enc: usize, rng: &mut R) -> Self {
        let b = |n: usize| 1.0 / (n as f64).sqrt();
        Self {
            score: Matrix::uniform(1, hidden_dec, b(hidden_dec), rng),
            w_audio: Matrix::uniform(hidden_dec, k, b(k), rng),
            w_hidden: Matrix::uniform(hidden_dec, hidden_enc, b(hidden_enc), rng),
        }
    }
}

/// Every learnable matrix of the network. Parts that the configured fusion
/// mode or extractor do not use are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub frontend: Option<ConvFrontend>,
    /// Early fusion: `k → d`.
    pub early_proj: Option<Linear>,
    pub encoder: LstmWeights,
    pub attention: Option<AttentionWeights>,
    /// Late fusion: `k → H_enc`.
    pub late_proj: Option<Linear>,
    pub decoder: LstmWeights,
    /// `V × H_dec` classifier.
    pub output: Linear,
}

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            frontend: (cfg.extractor == ExtractorKind::Trainable)
                .then(|| ConvFrontend::zeros(cfg.frame_dim, cfg.feature_dim)),
            early_proj: (cfg.fusion == Fusion::Early)
                .then(|| Linear::zeros(cfg.embed_dim, cfg.feature_dim)),
            encoder: LstmWeights::zeros(cfg.hidden_enc, cfg.encoder_input_dim()),
            attention: (cfg.fusion == Fusion::Attention)
                .then(|| AttentionWeights::zeros(cfg.hidden_dec, cfg.feature_dim, cfg.hidden_enc)),
            late_proj: (cfg.fusion == Fusion::Late)
                .then(|| Linear::zeros(cfg.hidden_enc, cfg.feature_dim)),
            decoder: LstmWeights::zeros(cfg.hidden_dec, cfg.decoder_input_dim()),
            output: Linear::zeros(cfg.vocab_size, cfg.hidden_dec),
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases, LSTM forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            frontend: (cfg.extractor == ExtractorKind::Trainable)
                .then(|| ConvFrontend::init(cfg.frame_dim, cfg.feature_dim, rng)),
            early_proj: (cfg.fusion == Fusion::Early)
                .then(|| Linear::init(cfg.embed_dim, cfg.feature_dim, rng)),
            encoder: LstmWeights::init(cfg.hidden_enc, cfg.encoder_input_dim(), rng),
            attention: (cfg.fusion == Fusion::Attention).then(|| {
                AttentionWeights::init(cfg.hidden_dec, cfg.feature_dim, cfg.hidden_enc, rng)
            }),
            late_proj: (cfg.fusion == Fusion::Late)
                .then(|| Linear::init(cfg.hidden_enc, cfg.feature_dim, rng)),
            decoder: LstmWeights::init(cfg.hidden_dec, cfg.decoder_input_dim(), rng),
            output: Linear::init(cfg.vocab_size, cfg.hidden_dec, rng),
        }
    }

    /// All allocated tensors with their names, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = Vec::with_capacity(16);
        if let Some(f) = &self.frontend {
            out.push(("frontend.weight", &f.weight));
            out.push(("frontend.bias", &f.bias));
        }
        if let Some(p) = &self.early_proj {
            out.push(("early_proj.weight", &p.weight));
            out.push(("early_proj.bias", &p.bias));
        }
        out.push(("encoder.w_x", &self.encoder.w_x));
        out.push(("encoder.w_h", &self.encoder.w_h));
        out.push(("encoder.bias", &self.encoder.bias));
        if let Some(a) = &self.attention {
            out.push(("attention.score", &a.score));
            out.push(("attention.w_audio", &a.w_audio));
            out.push(("attention.w_hidden", &a.w_hidden));
        }
        if let Some(p) = &self.late_proj {
            out.push(("late_proj.weight", &p.weight));
            out.push(("late_proj.bias", &p.bias));
        }
        out.push(("decoder.w_x", &self.decoder.w_x));
        out.push(("decoder.w_h", &self.decoder.w_h));
        out.push(("decoder.bias", &self.decoder.bias));
        out.push(("output.weight", &self.output.weight));
        out.push(("output.bias", &self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = Vec::with_capacity(16);
        if let Some(f) = &mut self.frontend {
            out.push(("frontend.weight", &mut f.weight));
            out.push(("frontend.bias", &mut f.bias));
        }
        if let Some(p) = &mut self.early_proj {
            out.push(("early_proj.weight", &mut p.weight));
            out.push(("early_proj.bias", &mut p.bias));
        }
        out.push(("encoder.w_x", &mut self.encoder.w_x));
        out.push(("encoder.w_h", &mut self.encoder.w_h));
        out.push(("encoder.bias", &mut self.encoder.bias));
        if let Some(a) = &mut self.attention {
            out.push(("attention.score", &mut a.score));
            out.push(("attention.w_audio", &mut a.w_audio));
            out.push(("attention.w_hidden", &mut a.w_hidden));
        }
        if let Some(p) = &mut self.late_proj {
            out.push(("late_proj.weight", &mut p.weight));
            out.push(("late_proj.bias", &mut p.bias));
        }
        out.push(("decoder.w_x", &mut self.decoder.w_x));
        out.push(("decoder.w_h", &mut self.decoder.w_h));
        out.push(("decoder.bias", &mut self.decoder.bias));
        out.push(("output.weight", &mut self.output.weight));
        out.push(("output.bias", &mut self.output.bias));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|(_, m)| m.fill(0.0));
        z
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Parameter values with a same-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub value: Weights,
    pub grad: Weights,
}

impl ModelParams {
    pub fn new(value: Weights) -> Self {
        let grad = value.zeros_like();
        Self { value, grad }
    }

    pub fn tensors_mut(&mut self) -> Vec<ParamTensor<'_>> {
        self.value
            .tensors_mut()
            .into_iter()
            .zip(self.grad.tensors_mut())
            .map(|((name, value), (_, grad))| ParamTensor { name, value, grad })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.grad.tensors_mut().into_iter().for_each(|(_, m)| m.fill(0.0));
    }
}
