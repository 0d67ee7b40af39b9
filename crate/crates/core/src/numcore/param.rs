use super::matrix::Matrix;

/// A named parameter paired with its gradient accumulator.
///
/// Models keep values and gradients in two structurally identical weight sets;
/// this is the borrowed pairing the optimizer and gradient checker walk over.
#[derive(Debug)]
pub struct ParamTensor<'a> {
    pub name: &'a str,
    pub value: &'a mut Matrix,
    pub grad: &'a mut Matrix,
}

impl ParamTensor<'_> {
    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Owned parameter, convenient for standalone use and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedParam {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl OwnedParam {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn as_tensor(&mut self) -> ParamTensor<'_> {
        ParamTensor {
            name: &self.name,
            value: &mut self.value,
            grad: &mut self.grad,
        }
    }
}

pub fn tensors(params: &mut [OwnedParam]) -> Vec<ParamTensor<'_>> {
    params.iter_mut().map(OwnedParam::as_tensor).collect()
}

/// Global L2 norm of all gradients.
pub fn grad_norm(params: &[ParamTensor<'_>]) -> f64 {
    params.iter().map(|p| p.grad.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [ParamTensor<'_>], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        params.iter_mut().for_each(|p| p.grad.scale(s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_global_norm() {
        let mut ps = vec![
            OwnedParam::new("a", Matrix::zeros(1, 2)),
            OwnedParam::new("b", Matrix::zeros(1, 1)),
        ];
        ps[0].grad = Matrix::from_vec(1, 2, vec![3.0, 0.0]).unwrap();
        ps[1].grad = Matrix::from_vec(1, 1, vec![4.0]).unwrap();
        let mut ts = tensors(&mut ps);
        assert_eq!(clip_grad_norm(&mut ts, 1.0), 5.0);
        assert!((grad_norm(&ts) - 1.0).abs() < 1e-12);
        assert_eq!(clip_grad_norm(&mut ts, 10.0), grad_norm(&ts));
    }
}
