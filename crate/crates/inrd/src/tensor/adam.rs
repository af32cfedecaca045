//! Adam optimizer with bias correction.
//!
//! Update rule per parameter entry, with step count t starting at 1:
//!   m <- b1*m + (1-b1)*g
//!   v <- b2*v + (1-b2)*g^2
//!   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
//! Moment buffers live in the parameter dtype; the bias-correction factors
//! are computed in f64 so long runs do not lose the correction to rounding.

use crate::error::{Error, Result};
use crate::tensor::matrix::{Matrix, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Optimizer state over an ordered parameter list. The list order is fixed
/// at construction; `step` must be called with parameters and gradients in
/// that same order.
pub struct AdamState<T: Scalar> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: AdamConfig, params: &[Matrix<T>]) -> Self {
        AdamState {
            cfg,
            t: 0,
            m: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Applies one update in place. Increments t exactly once regardless of
    /// parameter count.
    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(
                "adam_step",
                format!(
                    "expected {} parameter/gradient pairs, got {}/{}",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for i in 0..params.len() {
            if params[i].shape() != self.m[i].shape() || grads[i].shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "slot {}: state {:?}, param {:?}, grad {:?}",
                        i,
                        self.m[i].shape(),
                        params[i].shape(),
                        grads[i].shape()
                    ),
                ));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let b1 = T::real(self.cfg.beta1);
        let b2 = T::real(self.cfg.beta2);
        let one_m_b1 = T::real(1.0 - self.cfg.beta1);
        let one_m_b2 = T::real(1.0 - self.cfg.beta2);
        let inv_bc1 = T::real(1.0 / bc1);
        let inv_bc2 = T::real(1.0 / bc2);
        let lr = T::real(self.cfg.lr);
        let eps = T::real(self.cfg.eps);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for j in 0..pd.len() {
                let gj = gd[j];
                md[j] = b1 * md[j] + one_m_b1 * gj;
                vd[j] = b2 * vd[j] + one_m_b2 * gj * gj;
                let m_hat = md[j] * inv_bc1;
                let v_hat = vd[j] * inv_bc2;
                pd[j] = pd[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar reference stepped by hand with the documented recurrence.
    struct ScalarAdam {
        cfg: AdamConfig,
        t: u64,
        m: f64,
        v: f64,
    }

    impl ScalarAdam {
        fn new(cfg: AdamConfig) -> Self {
            ScalarAdam {
                cfg,
                t: 0,
                m: 0.0,
                v: 0.0,
            }
        }

        fn step(&mut self, p: f64, g: f64) -> f64 {
            self.t += 1;
            self.m = self.cfg.beta1 * self.m + (1.0 - self.cfg.beta1) * g;
            self.v = self.cfg.beta2 * self.v + (1.0 - self.cfg.beta2) * g * g;
            let m_hat = self.m / (1.0 - self.cfg.beta1.powi(self.t as i32));
            let v_hat = self.v / (1.0 - self.cfg.beta2.powi(self.t as i32));
            p - self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps)
        }
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // with g = 1 the bias-corrected moments are exactly 1, so the first
        // update is lr / (1 + eps)
        let cfg = AdamConfig::with_lr(0.1);
        let mut state = AdamState::new(cfg, &[Matrix::<f64>::zeros(1, 1)]);
        let mut params = [Matrix::from_vec(1, 1, vec![0.5]).unwrap()];
        let grads = [Matrix::from_vec(1, 1, vec![1.0]).unwrap()];
        state.step(&mut params, &grads).unwrap();
        let expected = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((params[0].get(0, 0) - expected).abs() < 1e-15);
        assert_eq!(state.t(), 1);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let cfg = AdamConfig::with_lr(0.05);
        let mut state = AdamState::new(cfg, &[Matrix::<f64>::zeros(1, 2)]);
        let mut params = [Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap()];

        let mut ref0 = ScalarAdam::new(cfg);
        let mut ref1 = ScalarAdam::new(cfg);
        let mut p0 = 0.3;
        let mut p1 = -0.7;

        for (g0, g1) in [(0.9, -0.4), (-0.2, 1.3)] {
            let grads = [Matrix::from_vec(1, 2, vec![g0, g1]).unwrap()];
            state.step(&mut params, &grads).unwrap();
            p0 = ref0.step(p0, g0);
            p1 = ref1.step(p1, g1);
        }
        assert!((params[0].get(0, 0) - p0).abs() < 1e-12, "{} vs {p0}", params[0].get(0, 0));
        assert!((params[0].get(0, 1) - p1).abs() < 1e-12, "{} vs {p1}", params[0].get(0, 1));
        assert_eq!(state.t(), 2);
    }

    #[test]
    fn zero_gradients_leave_fresh_state_unchanged() {
        let mut state = AdamState::new(AdamConfig::default(), &[Matrix::<f64>::zeros(2, 2)]);
        let mut params = [Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()];
        let before = params[0].clone();
        let grads = [Matrix::zeros(2, 2)];
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), before.data());
        assert_eq!(state.t(), 1);
    }

    #[test]
    fn t_increments_once_per_step_with_many_params() {
        let shapes = [Matrix::<f64>::zeros(2, 2), Matrix::zeros(1, 3)];
        let mut state = AdamState::new(AdamConfig::default(), &shapes);
        let mut params = [Matrix::zeros(2, 2), Matrix::zeros(1, 3)];
        let grads = [Matrix::zeros(2, 2), Matrix::zeros(1, 3)];
        state.step(&mut params, &grads).unwrap();
        state.step(&mut params, &grads).unwrap();
        assert_eq!(state.t(), 2);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), &[Matrix::<f64>::zeros(2, 2)]);
        let mut params = [Matrix::zeros(2, 2)];
        let grads = [Matrix::zeros(1, 2)];
        assert!(matches!(
            state.step(&mut params, &grads),
            Err(Error::Shape { .. })
        ));
        let mut too_many = [Matrix::zeros(2, 2), Matrix::zeros(2, 2)];
        let grads2 = [Matrix::zeros(2, 2), Matrix::zeros(2, 2)];
        assert!(matches!(
            state.step(&mut too_many, &grads2),
            Err(Error::Contract { .. })
        ));
    }
}
