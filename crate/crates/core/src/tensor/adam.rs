use super::{ParamStore, Real, Shape, Tensor};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Adam with bias correction. Moment buffers are laid out in parameter-store
/// order and zero-initialized.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Adam {
            config,
            t: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    fn check(&self, store: &ParamStore<T>) -> Result<()> {
        let expected: Vec<Shape> = store.ids().map(|id| store.value(id).shape()).collect();
        let actual: Vec<Shape> = self.first_moment.iter().map(|m| m.shape()).collect();
        let second: Vec<Shape> = self.second_moment.iter().map(|m| m.shape()).collect();
        if expected != actual || expected != second {
            return Err(dim_err!(
                "optimizer state for {} tensors does not match {} parameters",
                self.first_moment.len(),
                store.len()
            ));
        }
        Ok(())
    }

    /// One update from the gradients currently accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        self.check(store)?;
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let one = T::one();
        let bias1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (value, grad) = store.value_and_grad_mut(id);
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((p, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore<f64>, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v));
        (s, id)
    }

    #[test]
    fn single_step_by_hand() {
        let (mut store, id) = scalar_store(0.0);
        store.grad_mut(id).data_mut()[0] = 1.0;
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &store,
        );
        adam.step(&mut store).unwrap();
        // m_hat = 1, v_hat = 1, update = 0.1 / (1 + 1e-8)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.value(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, id) = scalar_store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id).data()[0], 0.7);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn identical_streams_give_identical_trajectories() {
        let run = || {
            let (mut store, id) = scalar_store(1.0);
            let mut adam = Adam::new(AdamConfig::default(), &store);
            let mut traj = Vec::new();
            for k in 0..20 {
                store.zero_grad();
                store.grad_mut(id).data_mut()[0] = (k as f64 * 0.37).sin();
                adam.step(&mut store).unwrap();
                traj.push(store.value(id).data()[0]);
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let (store, _) = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut other = ParamStore::new();
        other.add("q", Tensor::<f64>::zeros([1, 2, 1, 1]));
        assert!(adam.step(&mut other).is_err());
    }
}
