use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamId, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Adam {
    /// One descent step on every parameter present in `grads`, with a
    /// per-parameter learning rate. Parameters without a gradient keep their
    /// moments and step count untouched.
    pub fn update(&self, store: &mut ParameterStore, grads: &Gradients, lr: impl Fn(ParamId) -> f64) {
        for (id, g) in grads.iter() {
            let rate = lr(id);
            let entry = store.entry_mut(id);
            let slot = &mut entry.optimizer;
            slot.step += 1;
            let t = slot.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let values = entry.value.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let m = self.beta1 * slot.first_moment[i] + (1.0 - self.beta1) * gi;
                let v = self.beta2 * slot.second_moment[i] + (1.0 - self.beta2) * gi * gi;
                slot.first_moment[i] = m;
                slot.second_moment[i] = v;
                values[i] -= rate * (m / c1) / ((v / c2).sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        // Bias correction makes the first update lr · g / (|g| + eps).
        let mut store = ParameterStore::new();
        let p = store.insert("p", Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
        let grads = {
            let mut g = Graph::new(&store);
            let n = g.param(p);
            let s = g.sum(n).unwrap();
            g.backward(s).unwrap()
        };
        Adam::default().update(&mut store, &grads, |_| 0.1);
        let got = store.value(p).data();
        for (v, start) in got.iter().zip([1.0, -2.0, 0.5]) {
            assert!((v - (start - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
        }
        assert_eq!(store.entry(p).optimizer.step, 1);
    }

    #[test]
    fn matches_reference_recurrence_over_several_steps() {
        let mut store = ParameterStore::new();
        let p = store.insert("p", Tensor::vector(vec![3.0])).unwrap();
        let adam = Adam::default();
        let (mut x, mut m, mut v) = (3.0f64, 0.0f64, 0.0f64);
        for t in 1..=20 {
            let grads = {
                let mut g = Graph::new(&store);
                let n = g.param(p);
                let sq = g.mul(n, n).unwrap();
                let s = g.sum(sq).unwrap();
                g.backward(s).unwrap()
            };
            adam.update(&mut store, &grads, |_| 0.05);
            let gr = 2.0 * x;
            m = 0.9 * m + (1.0 - 0.9) * gr;
            v = 0.999 * v + (1.0 - 0.999) * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert_eq!(store.value(p).data()[0], x);
        }
    }

    #[test]
    fn parameters_without_gradients_are_untouched() {
        let mut store = ParameterStore::new();
        let a = store.insert("a", Tensor::vector(vec![1.0])).unwrap();
        let b = store.insert("b", Tensor::vector(vec![2.0])).unwrap();
        let grads = {
            let mut g = Graph::new(&store);
            let n = g.param(a);
            let s = g.sum(n).unwrap();
            g.backward(s).unwrap()
        };
        Adam::default().update(&mut store, &grads, |_| 0.1);
        assert_eq!(store.value(b).data(), &[2.0]);
        assert_eq!(store.entry(b).optimizer.step, 0);
    }
}
