//! Adam with bias-corrected moments and per-parameter step counts.

use crate::{Gradients, Matrix, NnError, ParamStore, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    first: Matrix,
    second: Matrix,
    steps: u64,
}

/// Optimizer state. Parameters without a gradient in a given step are left
/// untouched, moments included, so a frozen path never drifts.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: Vec<Option<Moments>>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: Vec::new(),
            steps: 0,
        }
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Every gradient is checked for finiteness before any
    /// parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteGradient(store.name(id).to_string()));
            }
            if g.dim() != store.get(id).dim() {
                return Err(NnError::shape("adam_step", store.get(id), g));
            }
        }
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (id, g) in grads.iter() {
            let slot = self.state[id.index()].get_or_insert_with(|| Moments {
                first: Matrix::zeros(g.dim()),
                second: Matrix::zeros(g.dim()),
                steps: 0,
            });
            slot.steps += 1;
            let t = slot.steps as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            slot.first.zip_mut_with(g, |m, &gv| *m = beta1 * *m + (1.0 - beta1) * gv);
            slot.second
                .zip_mut_with(g, |v, &gv| *v = beta2 * *v + (1.0 - beta2) * gv * gv);
            let param = store.get_mut(id);
            ndarray::Zip::from(param)
                .and(&slot.first)
                .and(&slot.second)
                .for_each(|p, &m, &v| {
                    let m_hat = m / c1;
                    let v_hat = v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        self.steps += 1;
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_param(value: Matrix) -> (ParamStore, crate::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", value).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut store, id) = one_param(array![[1.0, -2.0]]);
        let mut grads = Gradients::new(1);
        grads.insert(id, Matrix::zeros((1, 2)));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id), &array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        let (mut store, id) = one_param(array![[0.0, 0.0]]);
        let mut grads = Gradients::new(1);
        grads.insert(id, array![[0.3, -7.0]]);
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg);
        adam.step(&mut store, &grads).unwrap();
        let expected = [-1e-3 * 0.3 / (0.3 + 1e-8), 1e-3 * 7.0 / (7.0 + 1e-8)];
        for (got, want) in store.get(id).iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut store, id) = one_param(array![[1.0]]);
        let mut grads = Gradients::new(1);
        grads.insert(id, array![[f64::NAN]]);
        let err = Adam::new(AdamConfig::default())
            .step(&mut store, &grads)
            .unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient(ref n) if n == "p"));
        assert_eq!(store.get(id), &array![[1.0]]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut grads = Gradients::new(1);
        let (_, id) = one_param(array![[0.0, 0.0]]);
        grads.insert(id, array![[3.0, 4.0]]);
        let before = clip_global_norm(&mut grads, 1.0);
        assert_eq!(before, 5.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
