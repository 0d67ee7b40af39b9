//! A second, deliberately plain implementation of the batch loss, generic
//! over the scalar type. It shares no forward code with the main model and
//! runs in double-double precision for finite-difference gradient checks,
//! where `f64` roundoff would swamp entries with tiny gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExtractorKind, Fusion, ModelConfig};
use super::forward::{AudioInput, Example, Model};
use crate::numcore::{dropout_mask, Matrix, Scalar};

#[derive(Debug, Clone)]
struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().iter().map(|&v| T::from_f64(v)).collect(),
        }
    }

    fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let mut acc = T::zero();
                for c in 0..self.cols {
                    acc += self.at(r, c) * x[c];
                }
                acc
            })
            .collect()
    }
}

fn affine<T: Scalar>(w: &Mat<T>, b: &Mat<T>, x: &[T]) -> Vec<T> {
    w.mul_vec(x).into_iter().zip(&b.data).map(|(v, &bb)| v + bb).collect()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn lstm<T: Scalar>(w: &[&Mat<T>; 3], x: &[T], h: &[T], c: &[T]) -> (Vec<T>, Vec<T>) {
    let [wx, wh, b] = w;
    let n = h.len();
    let z: Vec<T> = affine(wx, b, x)
        .into_iter()
        .zip(wh.mul_vec(h))
        .map(|(a, b)| a + b)
        .collect();
    let mut h2 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for j in 0..n {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[n + j]);
        let g = z[2 * n + j].tanh();
        let o = sigmoid(z[3 * n + j]);
        let cj = f * c[j] + i * g;
        c2.push(cj);
        h2.push(o * cj.tanh());
    }
    (h2, c2)
}

fn scale<T: Scalar>(v: &mut [T], mask: &[f64]) {
    for (x, &m) in v.iter_mut().zip(mask) {
        *x = *x * T::from_f64(m);
    }
}

/// Model parameters, embeddings and audio converted to scalar type `T`.
pub struct ReferenceLoss<T> {
    config: ModelConfig,
    names: Vec<&'static str>,
    params: Vec<Mat<T>>,
    embeddings: Mat<T>,
    audio: Vec<Vec<Mat<T>>>,
    captions: Vec<Vec<usize>>,
    /// Per-item seeds for dropout masks, drawn exactly as in training.
    seeds: Vec<Option<u64>>,
}

impl<T: Scalar> ReferenceLoss<T> {
    pub fn new(model: &Model, batch: &[Example], dropout_seed: Option<u64>) -> Self {
        let tensors = model.weights().tensors();
        let audio = batch
            .iter()
            .map(|ex| match &ex.audio {
                AudioInput::Features(f) => vec![Mat::from(&f.features)],
                AudioInput::Chunks(c) => c.chunks.iter().map(Mat::from).collect(),
            })
            .collect();
        let seeds = match dropout_seed {
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                batch.iter().map(|_| Some(rng.random())).collect()
            }
            None => vec![None; batch.len()],
        };
        Self {
            config: model.config.clone(),
            names: tensors.iter().map(|(n, _)| *n).collect(),
            params: tensors.iter().map(|(_, m)| Mat::from(m)).collect(),
            embeddings: Mat::from(&model.embeddings.table),
            audio,
            captions: batch.iter().map(|e| e.caption.ids.clone()).collect(),
            seeds,
        }
    }

    /// Parameter entry in the order of [`super::Weights::tensors`].
    pub fn entry(&self, param: usize, index: usize) -> T {
        self.params[param].data[index]
    }

    pub fn set_entry(&mut self, param: usize, index: usize, value: T) {
        self.params[param].data[index] = value;
    }

    fn p(&self, name: &str) -> &Mat<T> {
        let i = self.names.iter().position(|n| *n == name).unwrap_or_else(|| panic!("no tensor {name}"));
        &self.params[i]
    }

    fn features(&self, item: usize) -> Vec<Vec<T>> {
        let src = &self.audio[item];
        match self.config.extractor {
            ExtractorKind::FrozenFile => (0..src[0].rows).map(|r| src[0].row(r).to_vec()).collect(),
            ExtractorKind::Trainable => {
                let (w, b) = (self.p("frontend.weight"), self.p("frontend.bias"));
                src.iter()
                    .map(|chunk| {
                        let positions = chunk.rows - 2;
                        let mut out = vec![T::zero(); w.rows];
                        for t in 0..positions {
                            let window: Vec<T> = (t..t + 3).flat_map(|r| chunk.row(r).to_vec()).collect();
                            for (o, y) in out.iter_mut().zip(affine(w, b, &window)) {
                                *o += y.tanh();
                            }
                        }
                        let n = T::from_f64(positions as f64);
                        out.into_iter().map(|v| v / n).collect()
                    })
                    .collect()
            }
        }
    }

    /// `Σ −log p(target)` over one caption and the number of targets.
    fn item_nll(&self, item: usize) -> (T, usize) {
        let cfg = &self.config;
        let a = self.features(item);
        let l = a.len();
        let mut pooled = vec![T::zero(); cfg.feature_dim];
        for row in &a {
            for (p, &v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let pooled: Vec<T> = pooled.into_iter().map(|v| v / T::from_f64(l as f64)).collect();
        let audio_vec = match cfg.fusion {
            Fusion::Early => affine(self.p("early_proj.weight"), self.p("early_proj.bias"), &pooled),
            Fusion::Late => affine(self.p("late_proj.weight"), self.p("late_proj.bias"), &pooled),
            Fusion::Attention => Vec::new(),
        };
        let enc = [self.p("encoder.w_x"), self.p("encoder.w_h"), self.p("encoder.bias")];
        let dec = [self.p("decoder.w_x"), self.p("decoder.w_h"), self.p("decoder.bias")];

        let mut rng = self.seeds[item].map(ChaCha8Rng::seed_from_u64);
        let ids = &self.captions[item];
        let (mut he, mut ce) = (vec![T::zero(); cfg.hidden_enc], vec![T::zero(); cfg.hidden_enc]);
        let (mut hd, mut cd) = (vec![T::zero(); cfg.hidden_dec], vec![T::zero(); cfg.hidden_dec]);
        let mut nll = T::zero();
        for t in 0..ids.len() - 1 {
            let masks = match rng.as_mut() {
                Some(r) if cfg.dropout > 0.0 => Some((
                    dropout_mask(cfg.embed_dim, cfg.dropout, r).expect("valid rate"),
                    dropout_mask(cfg.decoder_input_dim(), cfg.dropout, r).expect("valid rate"),
                )),
                _ => None,
            };
            let mut word = self.embeddings.row(ids[t]).to_vec();
            if let Some((m, _)) = &masks {
                scale(&mut word, m);
            }
            let x_enc = if cfg.fusion == Fusion::Early {
                [audio_vec.clone(), word].concat()
            } else {
                word
            };
            (he, ce) = lstm(&enc, &x_enc, &he, &ce);

            let mut x_dec = match cfg.fusion {
                Fusion::Early => he.clone(),
                Fusion::Late => [audio_vec.clone(), he.clone()].concat(),
                Fusion::Attention => {
                    let (w, wa, wh) = (self.p("attention.score"), self.p("attention.w_audio"), self.p("attention.w_hidden"));
                    let q = wh.mul_vec(&he);
                    let scores: Vec<T> = a
                        .iter()
                        .map(|ai| {
                            let mut e = T::zero();
                            for (j, k) in wa.mul_vec(ai).into_iter().enumerate() {
                                e += w.data[j] * (k + q[j]).tanh();
                            }
                            e
                        })
                        .collect();
                    let beta = softmax(&scores);
                    let mut attended = vec![T::zero(); cfg.feature_dim];
                    for (ai, &b) in a.iter().zip(&beta) {
                        for (o, &v) in attended.iter_mut().zip(ai) {
                            *o += b * v;
                        }
                    }
                    [attended, he.clone()].concat()
                }
            };
            if let Some((_, m)) = &masks {
                scale(&mut x_dec, m);
            }
            (hd, cd) = lstm(&dec, &x_dec, &hd, &cd);
            let logits = affine(self.p("output.weight"), self.p("output.bias"), &hd);
            let mut max = logits[0];
            for &v in &logits {
                if v > max {
                    max = v;
                }
            }
            let mut z = T::zero();
            for &v in &logits {
                z += (v - max).exp();
            }
            nll = nll - (logits[ids[t + 1]] - max - z.ln());
        }
        (nll, ids.len() - 1)
    }

    /// Mean negative log-likelihood over every target token of the batch.
    pub fn loss(&self) -> T {
        let mut sum = T::zero();
        let mut count = 0;
        for item in 0..self.captions.len() {
            let (nll, n) = self.item_nll(item);
            sum += nll;
            count += n;
        }
        sum / T::from_f64(count as f64)
    }
}

fn softmax<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut max = v[0];
    for &x in v {
        if x > max {
            max = x;
        }
    }
    let e: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let mut z = T::zero();
    for &x in &e {
        z += x;
    }
    e.into_iter().map(|x| x / z).collect()
}
