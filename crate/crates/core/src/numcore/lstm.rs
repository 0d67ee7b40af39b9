//! Single-step LSTM cell with an exact backward pass.
//!
//! Gate blocks are stacked in the fixed order input, forget, cell candidate,
//! output (`i, f, g, o`), each `H` rows tall, in both weight matrices and the
//! bias vector. Checkpoints store the blocks in this order.

use rand::Rng;

use super::matrix::{sigmoid, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `4H × D_in`
    pub w_x: Matrix,
    /// `4H × H`
    pub w_h: Matrix,
    /// `4H × 1`
    pub bias: Matrix,
}

impl LstmWeights {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * hidden, input),
            w_h: Matrix::zeros(4 * hidden, hidden),
            bias: Matrix::zeros(4 * hidden, 1),
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases except the forget gate at 1.0.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut w = Self {
            w_x: Matrix::uniform(4 * hidden, input, 1.0 / (input.max(1) as f64).sqrt(), rng),
            w_h: Matrix::uniform(4 * hidden, hidden, 1.0 / (hidden.max(1) as f64).sqrt(), rng),
            bias: Matrix::zeros(4 * hidden, 1),
        };
        w.bias.as_mut_slice()[hidden..2 * hidden].fill(1.0);
        w
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input(&self) -> usize {
        self.w_x.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden(), self.input())
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden();
        self.w_h.check_shape("lstm_cell", "w_h", 4 * h, h)?;
        self.w_x.check_shape("lstm_cell", "w_x", 4 * h, self.input())?;
        self.bias.check_shape("lstm_cell", "bias", 4 * h, 1)
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates, `[i; f; g; o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Gradients flowing out of one cell step towards its inputs.
#[derive(Debug, Clone)]
pub struct LstmInputGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// One LSTM step. Returns the cache; the new state is `cache.h`, `cache.c`.
pub fn lstm_cell(x: &[f64], h: &[f64], c: &[f64], w: &LstmWeights) -> Result<LstmCache> {
    w.validate()?;
    let hidden = w.hidden();
    if x.len() != w.input() {
        return Err(Error::shape("lstm_cell", "x", w.input(), x.len()));
    }
    if h.len() != hidden {
        return Err(Error::shape("lstm_cell", "h", hidden, h.len()));
    }
    if c.len() != hidden {
        return Err(Error::shape("lstm_cell", "c", hidden, c.len()));
    }

    let mut z = w.w_x.matvec(x);
    for ((zi, hi), bi) in z.iter_mut().zip(w.w_h.matvec(h)).zip(w.bias.as_slice()) {
        *zi += hi + bi;
    }
    for (j, zj) in z.iter_mut().enumerate() {
        *zj = if (2 * hidden..3 * hidden).contains(&j) {
            zj.tanh()
        } else {
            sigmoid(*zj)
        };
    }
    let (i, rest) = z.split_at(hidden);
    let (f, rest) = rest.split_at(hidden);
    let (g, o) = rest.split_at(hidden);

    let c_new: Vec<f64> = (0..hidden).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

    Ok(LstmCache {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        c_prev: c.to_vec(),
        gates: z,
        c: c_new,
        tanh_c,
        h: h_new,
    })
}

/// Backward through one step. `dh` and `dc` are the loss gradients w.r.t. the
/// step's outputs; weight gradients are accumulated into `grads`.
pub fn lstm_cell_backward(
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
    w: &LstmWeights,
    grads: &mut LstmWeights,
) -> LstmInputGrads {
    let hidden = w.hidden();
    let (i, rest) = cache.gates.split_at(hidden);
    let (f, rest) = rest.split_at(hidden);
    let (g, o) = rest.split_at(hidden);

    let mut dz = vec![0.0; 4 * hidden];
    let mut dc_prev = vec![0.0; hidden];
    for j in 0..hidden {
        let t = cache.tanh_c[j];
        let do_ = dh[j] * t;
        let dc_total = dc[j] + dh[j] * o[j] * (1.0 - t * t);
        let di = dc_total * g[j];
        let dg = dc_total * i[j];
        let df = dc_total * cache.c_prev[j];
        dc_prev[j] = dc_total * f[j];

        dz[j] = di * i[j] * (1.0 - i[j]);
        dz[hidden + j] = df * f[j] * (1.0 - f[j]);
        dz[2 * hidden + j] = dg * (1.0 - g[j] * g[j]);
        dz[3 * hidden + j] = do_ * o[j] * (1.0 - o[j]);
    }

    grads.w_x.add_outer(&dz, &cache.x);
    grads.w_h.add_outer(&dz, &cache.h_prev);
    grads.bias.add_slice(&dz);

    LstmInputGrads {
        dx: w.w_x.matvec_t(&dz),
        dh_prev: w.w_h.matvec_t(&dz),
        dc_prev,
    }
}
