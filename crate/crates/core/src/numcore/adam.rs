use super::matrix::Matrix;
use super::param::ParamTensor;
use crate::error::{Error, Result};

/// Adam moments and step counter. Moments are allocated lazily on the first
/// step and must keep matching the parameter set afterwards.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    names: Vec<String>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn ensure_layout(&mut self, params: &[ParamTensor<'_>]) -> Result<()> {
        if self.m.is_empty() && self.t == 0 {
            self.names = params.iter().map(|p| p.name.to_string()).collect();
            self.m = params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.v = self.m.clone();
            return Ok(());
        }
        if self.m.len() != params.len() {
            return Err(Error::shape("adam_step", "parameter set", self.m.len(), params.len()));
        }
        for ((p, m), name) in params.iter().zip(&self.m).zip(&self.names) {
            if p.name != name || p.value.shape() != m.shape() {
                return Err(Error::shape(
                    "adam_step",
                    p.name,
                    format!("{name} {:?}", m.shape()),
                    format!("{} {:?}", p.name, p.value.shape()),
                ));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut [ParamTensor<'_>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate {lr} must be positive")));
        }
        if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", bad.name)));
        }
        self.ensure_layout(params)?;

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let values = p.value.as_mut_slice();
            let grads = p.grad.as_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for j in 0..values.len() {
                let g = grads[j];
                ms[j] = self.beta1 * ms[j] + (1.0 - self.beta1) * g;
                vs[j] = self.beta2 * vs[j] + (1.0 - self.beta2) * g * g;
                let m_hat = ms[j] / bc1;
                let v_hat = vs[j] / bc2;
                values[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut [ParamTensor<'_>], state: &mut AdamState, lr: f64) -> Result<()> {
    state.step(params, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::param::{tensors, OwnedParam};

    fn scalar(name: &str, v: f64) -> OwnedParam {
        OwnedParam::new(name, Matrix::from_vec(1, 1, vec![v]).unwrap())
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.37, -12.0, 1e-3] {
            let mut ps = vec![scalar("w", 1.0)];
            ps[0].grad[(0, 0)] = g;
            let mut st = AdamState::default();
            st.step(&mut tensors(&mut ps), 0.01).unwrap();
            let delta = ps[0].value[(0, 0)] - 1.0;
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-12, "{delta} vs {expected}");
            assert_eq!(ps[0].grad[(0, 0)], 0.0, "gradient not zeroed");
        }
    }

    #[test]
    fn zero_gradient_is_exact_identity() {
        let mut ps = vec![
            OwnedParam::new("a", Matrix::from_vec(2, 2, vec![0.1, -3.0, 7.5, 1e-9]).unwrap()),
            scalar("b", -0.25),
        ];
        let before = ps.clone();
        let mut st = AdamState::default();
        for _ in 0..25 {
            st.step(&mut tensors(&mut ps), 0.1).unwrap();
        }
        assert_eq!(ps, before);
        assert_eq!(st.t, 25);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut ps = vec![scalar("theta", 1.0)];
        let mut st = AdamState::default();
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let theta = ps[0].value[(0, 0)];
            ps[0].grad[(0, 0)] = 2.0 * theta;
            st.step(&mut tensors(&mut ps), 0.1).unwrap();
            let now = ps[0].value[(0, 0)].abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = vec![scalar("ok", 0.0), scalar("broken", 0.0)];
        ps[1].grad[(0, 0)] = f64::NAN;
        let err = AdamState::default()
            .step(&mut tensors(&mut ps), 0.1)
            .unwrap_err();
        assert!(err.to_string().contains("broken"), "{err}");
    }

    #[test]
    fn layout_change_is_rejected() {
        let mut st = AdamState::default();
        let mut ps = vec![scalar("a", 0.0)];
        st.step(&mut tensors(&mut ps), 0.1).unwrap();
        let mut other = vec![OwnedParam::new("a", Matrix::zeros(2, 1))];
        assert!(st.step(&mut tensors(&mut other), 0.1).is_err());
    }
}
