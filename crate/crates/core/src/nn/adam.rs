//! Bias-corrected Adam.

use ndarray::Array2;

use super::params::{Gradients, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update in place. Non-finite gradients are rejected before anything
    /// is touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        grads.check_finite(store)?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            ndarray::Zip::from(store.value_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(grads.get(id))
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use ndarray::array;

    fn grads_of(store: &ParamStore, vals: &[Array2<f64>]) -> Gradients {
        let mut g = Gradients::zeros_like(store);
        for (id, v) in store.ids().zip(vals) {
            g.accumulate(id, v);
        }
        g
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::default();
        store.add("w", array![[0.0]]);
        let mut adam = Adam::new(&store, 1e-3);
        let g = grads_of(&store, &[array![[1.0]]]);
        adam.step(&mut store, &g).unwrap();
        let w = store.value(store.find("w").unwrap())[[0, 0]];
        // m^ = 1, v^ = 1 -> delta = -lr / (1 + eps)
        assert!((w + 1e-3).abs() < 1e-10);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = ParamStore::default();
        store.add("w", array![[0.5, -2.0]]);
        let before = store.clone();
        let mut adam = Adam::new(&store, 1e-3);
        let g = Gradients::zeros_like(&store);
        for _ in 0..3 {
            adam.step(&mut store, &g).unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn equal_gradients_equal_trajectories() {
        let mut store = ParamStore::default();
        store.add("a", array![[1.0]]);
        store.add("b", array![[1.0]]);
        let mut adam = Adam::new(&store, 1e-2);
        for k in 0..20 {
            let g = (k as f64 * 0.7).sin();
            let grads = grads_of(&store, &[array![[g]], array![[g]]]);
            adam.step(&mut store, &grads).unwrap();
        }
        let ids: Vec<_> = store.ids().collect();
        assert_eq!(store.value(ids[0]), store.value(ids[1]));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::default();
        store.add("enc/w", array![[0.0]]);
        let mut adam = Adam::new(&store, 1e-3);
        let grads = grads_of(&store, &[array![[f64::NAN]]]);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref p) if p == "enc/w"));
        assert_eq!(adam.step, 0);
    }
}
