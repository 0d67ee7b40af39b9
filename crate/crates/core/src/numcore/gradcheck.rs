//! Central finite-difference verification of analytic gradients.

use super::param::ParamTensor;
use crate::error::{Error, Result};

/// Something with a scalar loss and an analytic gradient over its parameters.
pub trait Differentiable {
    /// Evaluates the loss without touching gradients.
    fn loss(&mut self) -> Result<f64>;

    /// Evaluates the loss and accumulates its gradient into the parameter
    /// gradients (which the checker zeroes beforehand).
    fn loss_and_grad(&mut self) -> Result<f64>;

    fn params_mut(&mut self) -> Vec<ParamTensor<'_>>;

    /// `(f(θ+ε) − f(θ−ε)) / 2ε` for entry `index` of parameter `param`.
    ///
    /// The default perturbs the parameter in place and calls [`loss`](Self::loss).
    /// Implementors may evaluate the two losses in higher precision.
    fn central_difference(&mut self, param: usize, index: usize, eps: f64) -> Result<f64> {
        let original = set_entry(self, param, index, None);
        set_entry(self, param, index, Some(original + eps));
        let plus = self.loss();
        set_entry(self, param, index, Some(original - eps));
        let minus = self.loss();
        set_entry(self, param, index, Some(original));
        Ok((plus? - minus?) / (2.0 * eps))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry, with the analytic and numeric values there.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn all_passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error >= self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with `(f(θ+ε) − f(θ−ε)) / 2ε` entry by entry
/// and reports the maximum relative error per parameter.
pub fn grad_check<D: Differentiable + ?Sized>(
    model: &mut D,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    for mut p in model.params_mut() {
        p.zero_grad();
    }
    model.loss_and_grad()?;
    let analytic: Vec<(String, Vec<f64>)> = model
        .params_mut()
        .into_iter()
        .map(|p| (p.name.to_string(), p.grad.as_slice().to_vec()))
        .collect();

    let first = model.loss()?;
    let second = model.loss()?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two forward passes gave {first} and {second}"
        )));
    }

    let mut params = Vec::with_capacity(analytic.len());
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: grads.first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        for (j, &a) in grads.iter().enumerate() {
            let numeric = model.central_difference(pi, j, eps)?;
            let err = relative_error(a, numeric);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("finite difference for `{name}`[{j}]")));
            }
            if j == 0 || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = j;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport { tol, params })
}

/// Reads entry `j` of parameter `pi`, optionally overwriting it. Returns the old value.
fn set_entry<D: Differentiable + ?Sized>(model: &mut D, pi: usize, j: usize, value: Option<f64>) -> f64 {
    let mut ps = model.params_mut();
    let slot = &mut ps[pi].value.as_mut_slice()[j];
    let old = *slot;
    if let Some(v) = value {
        *slot = v;
    }
    old
}
