use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T: Scalar = f64> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// Bias-corrected Adam accumulators for an ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f64> {
    pub config: AdamConfig<T>,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig<T>, shapes: &[Vec<usize>]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Applies one update to every parameter and increments the step counter.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters and gradients", self.first.len()),
                format!("{} / {}", params.len(), grads.len()),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            p.expect_same_shape("adam_step", g)?;
            p.expect_same_shape("adam_step", m)?;
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = T::one() - beta1.powi(t);
        let bc2 = T::one() - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = beta1 * *mv + (T::one() - beta1) * gv;
                *vv = beta2 * *vv + (T::one() - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grad: f64, steps: usize) -> (Tensor<f64>, AdamState<f64>) {
        let mut p = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let g = Tensor::full(&[3], grad);
        let mut st = AdamState::new(AdamConfig::with_lr(1e-3), &[vec![3]]);
        for _ in 0..steps {
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        (p, st)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (p, st) = run(0.0, 3);
        assert_eq!(p.data(), &[0.5, -1.0, 2.0]);
        assert!(st.first[0].data().iter().all(|&v| v == 0.0));
        assert!(st.second[0].data().iter().all(|&v| v == 0.0));
        assert_eq!(st.step, 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.3, -7.0, 1e-3] {
            let (p, _) = run(g, 1);
            let lr = 1e-3;
            for (new, old) in p.data().iter().zip([0.5, -1.0, 2.0]) {
                let delta = new - old;
                assert!((delta + lr * g.signum()).abs() < lr * 1e-3, "g={g} delta={delta}");
            }
        }
    }

    #[test]
    fn repeat_runs_are_bit_identical() {
        let (a, sa) = run(0.25, 2);
        let (b, sb) = run(0.25, 2);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = Tensor::<f64>::zeros(&[3]);
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(AdamConfig::with_lr(1e-3), &[vec![3]]);
        assert!(st.step(&mut [&mut p], &[&g]).is_err());
        assert_eq!(st.step, 0);
    }
}
