use serde::{Deserialize, Serialize};

use super::{Gradients, KernelError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one pair of moment buffers per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), KernelError> {
        let all = vec![true; store.len()];
        self.step_masked(store, grads, &all)
    }

    /// Updates only parameters whose `trainable` flag is set. Nothing is
    /// modified if any trainable gradient is non-finite.
    pub fn step_masked(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        trainable: &[bool],
    ) -> Result<(), KernelError> {
        if grads.len() != store.len() || trainable.len() != store.len() || self.first.len() != store.len() {
            return Err(KernelError::GradientLayout);
        }
        for id in store.ids() {
            let g = grads.get(id);
            if g.len() != store.get(id).len() {
                return Err(KernelError::GradientLayout);
            }
            if trainable[id.index()] && !g.is_finite() {
                return Err(KernelError::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for id in store.ids() {
            if !trainable[id.index()] {
                continue;
            }
            let i = id.index();
            let g = grads.get(id).data();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let theta = store.get_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    fn setup(values: Vec<f64>) -> (ParamStore, Gradients) {
        let mut store = ParamStore::new();
        store.add("g", "w", Tensor::row(values).unwrap());
        let grads = Gradients::zeros_like(&store);
        (store, grads)
    }

    fn grads_of(store: &ParamStore, g: Vec<f64>) -> Gradients {
        // gradient of sum(c ⊙ w) is c
        let id = store.find("w").unwrap();
        let mut graph = Graph::new();
        let w = graph.param(store, id).unwrap();
        let y = graph.mul_const(w, g).unwrap();
        let s = graph.sum(y).unwrap();
        graph.backward(s, store).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut store, _) = setup(vec![1.0, -2.0, 0.5]);
        let g = vec![0.3, -4.0, 1e-3];
        let grads = grads_of(&store, g.clone());
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads).unwrap();
        let lr = 5e-4;
        let after = store.get(store.find("w").unwrap()).data().to_vec();
        for ((a, b), gi) in after.iter().zip([1.0, -2.0, 0.5]).zip(&g) {
            let expected = lr * gi.abs() / (gi.abs() + 1e-8);
            assert!(((a - b).abs() - expected).abs() < 1e-15);
            assert!(((a - b).abs() - lr).abs() < lr * 1e-4);
            assert_eq!((b - a).signum(), gi.signum());
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, grads) = setup(vec![1.0, 2.0]);
        let before = store.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn constant_gradient_two_steps() {
        // closed-form recurrence, evaluated independently of the implementation
        let (b1, b2, lr, eps, g) = (0.9f64, 0.999f64, 5e-4, 1e-8, 0.7f64);
        let (mut m, mut v) = (0.0, 0.0);
        let mut expected = Vec::new();
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let step = lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            expected.push(step);
        }
        let (mut store, _) = setup(vec![0.0]);
        let grads = grads_of(&store, vec![g]);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let id = store.find("w").unwrap();
        for want in expected {
            let before = store.get(id).data()[0];
            adam.step(&mut store, &grads).unwrap();
            let delta = before - store.get(id).data()[0];
            assert!((delta - want).abs() < 1e-15);
            assert!((delta - lr).abs() < 0.01 * lr);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let (mut store, _) = setup(vec![1.0]);
        let id = store.find("w").unwrap();
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &[f64::NAN]);
        let before = store.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert_eq!(err, KernelError::NonFiniteGradient("w".into()));
        assert_eq!(store, before);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn masked_params_stay_put() {
        let mut store = ParamStore::new();
        let a = store.add("g", "a", Tensor::scalar(1.0));
        let b = store.add("g", "b", Tensor::scalar(1.0));
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(a, &[1.0]);
        grads.accumulate(b, &[1.0]);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step_masked(&mut store, &grads, &[true, false]).unwrap();
        assert!(store.get(a).data()[0] < 1.0);
        assert_eq!(store.get(b).data()[0], 1.0);
    }
}
