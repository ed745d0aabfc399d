//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::tensor::ParamTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam settings: {self:?}")))
        }
    }

    pub fn with_weight_decay(self, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..self
        }
    }
}

/// One Adam update on every tensor. Gradients are left in place; the caller
/// zeroes them. If any gradient is non-finite nothing is updated.
pub fn adam_step<'a, I>(params: I, config: &AdamConfig) -> Result<()>
where
    I: IntoIterator<Item = &'a mut ParamTensor>,
{
    config.validate()?;
    let mut params: Vec<&mut ParamTensor> = params.into_iter().collect();
    if let Some(bad) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient(bad.name().to_string()));
    }
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bias1 = 1.0 - config.beta1.powi(t);
        let bias2 = 1.0 - config.beta2.powi(t);
        let decay = config.learning_rate * config.weight_decay;
        for i in 0..p.values.len() {
            let g = p.grad[i];
            p.adam_m[i] = config.beta1 * p.adam_m[i] + (1.0 - config.beta1) * g;
            p.adam_v[i] = config.beta2 * p.adam_v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = p.adam_m[i] / bias1;
            let v_hat = p.adam_v[i] / bias2;
            p.values[i] -= decay * p.values[i];
            p.values[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Shape;

    fn scalar(v: f64) -> ParamTensor {
        ParamTensor::from_values("x", Shape::Vector(1), vec![v])
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let cfg = AdamConfig::default().with_weight_decay(0.0);
        let mut p = ParamTensor::from_values("p", Shape::Vector(3), vec![1.0, -2.0, 0.5]);
        for _ in 0..5 {
            adam_step([&mut p], &cfg).unwrap();
        }
        assert_eq!(p.values(), &[1.0, -2.0, 0.5]);
        assert_eq!(p.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig::default().with_weight_decay(0.0);
        let mut p = scalar(0.0);
        p.grad_mut()[0] = 1.0;
        adam_step([&mut p], &cfg).unwrap();
        let expected = -cfg.learning_rate / (1.0 + cfg.epsilon);
        assert_eq!(p.values()[0], expected);
        assert!((p.values()[0] + cfg.learning_rate).abs() < 1e-9);
        assert_eq!(p.grad()[0], 1.0, "grads are not touched");
    }

    #[test]
    fn decreases_convex_quadratic() {
        // f(x) = (x - 3)^2
        let cfg = AdamConfig::default();
        let mut p = scalar(0.0);
        let loss = |x: f64| (x - 3.0).powi(2);
        let mut last = loss(0.0);
        for _ in 0..2 {
            let x = p.values()[0];
            p.zero_grad();
            p.grad_mut()[0] = 2.0 * (x - 3.0);
            adam_step([&mut p], &cfg).unwrap();
            let now = loss(p.values()[0]);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor_and_updates_nothing() {
        let cfg = AdamConfig::default();
        let mut a = scalar(1.0);
        let mut b = ParamTensor::from_values("enc.w0", Shape::Vector(1), vec![2.0]);
        a.grad_mut()[0] = 1.0;
        b.grad_mut()[0] = f64::NAN;
        let err = adam_step([&mut a, &mut b], &cfg).unwrap_err();
        assert!(err.to_string().contains("enc.w0"));
        assert_eq!(a.values()[0], 1.0);
        assert_eq!(a.step_count(), 0);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut p = scalar(2.0);
        adam_step([&mut p], &cfg).unwrap();
        assert_eq!(p.values()[0], 2.0 - cfg.learning_rate * 0.1 * 2.0);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
