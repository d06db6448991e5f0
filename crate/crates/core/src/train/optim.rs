//! AdamW with decoupled weight decay and optional global-norm clipping.

use std::collections::HashMap;

use scd_autograd::{ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    /// Indexed by `ParamId`; `None` until the parameter first receives a gradient.
    pub(crate) state: Vec<Option<MomentState>>,
}

/// What one optimizer step saw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            grad_clip: None,
            state: Vec::new(),
        }
    }

    pub fn state(&self, id: ParamId) -> Option<&MomentState> {
        self.state.get(id.0).and_then(|s| s.as_ref())
    }

    pub(crate) fn set_state(&mut self, id: ParamId, s: MomentState) {
        if self.state.len() <= id.0 {
            self.state.resize(id.0 + 1, None);
        }
        self.state[id.0] = Some(s);
    }

    /// Updates every trainable parameter that has a gradient; buffers and
    /// parameters without gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Tensor>) -> StepStats {
        let ids: Vec<ParamId> = store
            .trainable_ids()
            .into_iter()
            .filter(|id| grads.contains_key(id))
            .collect();
        let grad_norm = ids
            .iter()
            .map(|id| grads[id].data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let scale = match self.grad_clip {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        let (b1, b2) = (self.beta1, self.beta2);
        for id in ids {
            let g = grads[&id].data();
            let st = self.state[id.0].get_or_insert_with(|| MomentState {
                step: 0,
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            st.step += 1;
            let c1 = 1.0 - b1.powi(st.step as i32);
            let c2 = 1.0 - b2.powi(st.step as i32);
            let decay = 1.0 - self.lr * self.weight_decay;
            let p = store.data_mut(id);
            for i in 0..p.len() {
                let gi = g[i] * scale;
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * gi;
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * gi * gi;
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                p[i] = p[i] * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        StepStats {
            grad_norm,
            clipped: scale < 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // with bias correction the first Adam step is lr * g / (|g| + eps)
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut grads = HashMap::new();
        grads.insert(id, Tensor::new([3], vec![0.3, -4.0, 0.0]).unwrap());
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut store, &grads);
        let p = store.get(id).data().to_vec();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new([1], vec![2.0]).unwrap());
        let mut grads = HashMap::new();
        grads.insert(id, Tensor::new([1], vec![0.0]).unwrap());
        let mut opt = AdamW::new(0.1, 0.5);
        opt.step(&mut store, &grads);
        assert!((store.get(id).data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros([1]));
        let b = store.add("b", Tensor::zeros([1]));
        let mut grads = HashMap::new();
        grads.insert(a, Tensor::new([1], vec![3.0]).unwrap());
        grads.insert(b, Tensor::new([1], vec![4.0]).unwrap());
        let mut opt = AdamW::new(0.1, 0.0);
        opt.grad_clip = Some(1.0);
        let stats = opt.step(&mut store, &grads);
        assert_eq!(stats.grad_norm, 5.0);
        assert!(stats.clipped);
        assert!((opt.state(a).unwrap().m[0] - 0.1 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut store = ParamStore::new();
        let buf = store.add_buffer("running_mean", Tensor::full([2], 1.0));
        let mut grads = HashMap::new();
        grads.insert(buf, Tensor::full([2], 1.0));
        AdamW::new(0.1, 0.1).step(&mut store, &grads);
        assert_eq!(store.get(buf).data(), &[1.0, 1.0]);
    }
}
