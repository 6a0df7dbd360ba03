use serde::{Deserialize, Serialize};

use super::{Gradients, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-8,
        }
    }
}

/// One Adam step with bias correction over every parameter in `store`.
///
/// Weight decay is coupled: `weight_decay * param` is added to the gradient
/// before the moment updates. Parameters absent from `grads` are treated as
/// having zero gradient.
pub fn adam_step<T: Real>(store: &mut ParameterStore<T>, grads: &Gradients<T>, config: &AdamConfig) -> Result<()> {
    if !(config.lr > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            config.lr
        )));
    }
    for (name, grad) in grads.iter() {
        let slot = store
            .slots
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        if slot.value.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient {name} is {:?}, parameter is {:?}",
                grad.shape(),
                slot.value.shape()
            )));
        }
    }

    store.step += 1;
    let t = store.step as i32;
    let c = |x: f64| T::from_f64_lossy(x);
    let (beta1, beta2) = (c(config.beta1), c(config.beta2));
    let correction1 = c(1.0 - config.beta1.powi(t));
    let correction2 = c(1.0 - config.beta2.powi(t));
    let (lr, eps, decay) = (c(config.lr), c(config.eps), c(config.weight_decay));
    let one = T::one();

    for (name, slot) in store.slots.iter_mut() {
        let grad = grads.get(name);
        let n = slot.value.len();
        let value = slot.value.data_mut();
        let m = slot.first_moment.data_mut();
        let v = slot.second_moment.data_mut();
        for k in 0..n {
            let g = grad.map_or(T::zero(), |g| g.data()[k]) + decay * value[k];
            m[k] = beta1 * m[k] + (one - beta1) * g;
            v[k] = beta2 * v[k] + (one - beta2) * g * g;
            let m_hat = m[k] / correction1;
            let v_hat = v[k] / correction2;
            value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(name: &str, values: Vec<f64>) -> ParameterStore<f64> {
        let mut store = ParameterStore::new();
        store.insert(name, Tensor::row_vector(values));
        store
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut store = store_with("w", vec![0.5, -1.5]);
        let mut grads = Gradients::new();
        grads.insert("w", Tensor::zeros(1, 2));
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..5 {
            adam_step(&mut store, &grads, &config).unwrap();
        }
        assert_eq!(store.get("w").unwrap().data(), &[0.5, -1.5]);
        assert_eq!(store.step(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let mut store = store_with("w", vec![1.0, 1.0, 1.0]);
        let mut grads = Gradients::new();
        grads.insert("w", Tensor::row_vector(vec![3.0, -0.02, 250.0]));
        let config = AdamConfig {
            lr: 0.01,
            eps: 0.0,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &grads, &config).unwrap();
        let got = store.get("w").unwrap().data().to_vec();
        for (g, want) in got.iter().zip([0.99, 1.01, 0.99]) {
            assert!((g - want).abs() < 1e-12, "{g} vs {want}");
        }
    }

    /// Scalar Adam written out longhand.
    fn scalar_adam(mut theta: f64, grads: &[f64], lr: f64, decay: f64) -> f64 {
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            let g = g + decay * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        theta
    }

    #[test]
    fn weight_decay_only_matches_scalar_oracle() {
        let mut store = store_with("w", vec![2.0]);
        let mut grads = Gradients::new();
        grads.insert("w", Tensor::zeros(1, 1));
        let config = AdamConfig {
            lr: 0.001,
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &grads, &config).unwrap();
        let want = scalar_adam(2.0, &[0.0], 0.001, 0.1);
        assert!((store.get("w").unwrap().item() - want).abs() < 1e-15);
        // Bias-corrected first step on a positive effective gradient.
        assert!((want - 1.999).abs() < 1e-9);
    }

    #[test]
    fn several_steps_match_scalar_oracle() {
        let mut store = store_with("w", vec![0.3]);
        let seq = [0.5, -0.25, 1.5, 0.0, -2.0];
        let config = AdamConfig {
            lr: 0.05,
            weight_decay: 0.01,
            ..AdamConfig::default()
        };
        for g in seq {
            let mut grads = Gradients::new();
            grads.insert("w", Tensor::scalar(g));
            adam_step(&mut store, &grads, &config).unwrap();
        }
        let want = scalar_adam(0.3, &seq, 0.05, 0.01);
        assert!((store.get("w").unwrap().item() - want).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = store_with("w", vec![1.0, 2.0]);
        let mut grads = Gradients::new();
        grads.insert("w", Tensor::zeros(2, 1));
        let err = adam_step(&mut store, &grads, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert_eq!(store.step(), 0);
    }

    #[test]
    fn unknown_gradient_name_is_an_error() {
        let mut store = store_with("w", vec![1.0]);
        let mut grads = Gradients::new();
        grads.insert("nope", Tensor::zeros(1, 1));
        assert!(adam_step(&mut store, &grads, &AdamConfig::default()).is_err());
    }
}
