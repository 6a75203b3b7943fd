//! Adam optimizer state and update.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter Adam moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Apply one Adam update in place.
    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "adam: param {i} shape {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for x in 0..pd.len() {
                md[x] = c.beta1 * md[x] + (1.0 - c.beta1) * gd[x];
                vd[x] = c.beta2 * vd[x] + (1.0 - c.beta2) * gd[x] * gd[x];
                let m_hat = md[x] / bias1;
                let v_hat = vd[x] / bias2;
                pd[x] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::vector(&[1.0, -2.0, 0.5])];
        let grads = vec![Tensor::vector(&[3.0, -0.7, 0.2])];
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &params);
        let before = params[0].clone();
        adam.apply(&mut params, &grads).unwrap();
        for i in 0..3 {
            let delta = (params[0].data()[i] - before.data()[i]).abs();
            assert!((0.099..=0.1).contains(&delta), "delta {delta}");
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(&[1.0, 2.0])];
        let grads = vec![Tensor::zeros(&[2])];
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &params);
        let before = params[0].clone();
        adam.apply(&mut params, &grads).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn quadratic_bowl_shrinks_norm() {
        // f(x) = ||x||^2, grad = 2x, paper's default learning rate.
        let mut params = vec![Tensor::vector(&[1.0, -1.5, 2.0])];
        let mut adam = AdamState::new(AdamConfig::with_lr(5e-4), &params);
        let start_norm: f64 = params[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..500 {
            let grads = vec![params[0].map(|v| 2.0 * v)];
            adam.apply(&mut params, &grads).unwrap();
        }
        let end_norm: f64 = params[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(end_norm < start_norm, "{end_norm} vs {start_norm}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::vector(&[1.0, 2.0])];
        let grads = vec![Tensor::vector(&[1.0])];
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &params);
        assert!(adam.apply(&mut params, &grads).is_err());
    }
}
