use crate::numerics::param::ParamStore;
use crate::numerics::tensor::Tensor;

/// Adam with optional global-norm gradient clipping. Only trainable
/// parameters are touched; frozen slots keep moment buffers of zeros that
/// are never read.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, clip_norm: Option<f64>) -> Self {
        let m = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        let v = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            m,
            v,
            t: 0,
        }
    }

    /// Applies one update from the gradients currently loaded in the store.
    /// Returns the pre-clip global gradient norm.
    pub fn step(&mut self, store: &mut ParamStore) -> f64 {
        self.t += 1;
        let mut sq = 0.0;
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect();
        for &id in &ids {
            sq += store.get(id).grad.data().iter().map(|g| g * g).sum::<f64>();
        }
        let norm = sq.sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c && norm > 0.0 => c / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for &id in &ids {
            let idx = id.0;
            let grad: Vec<f64> = store.get(id).grad.data().iter().map(|g| g * scale).collect();
            let value = store.value_mut(id);
            for i in 0..grad.len() {
                let g = grad[i];
                let m = &mut self.m[idx].data_mut()[i];
                *m = 0.9 * *m + 0.1 * g;
                let v = &mut self.v[idx].data_mut()[i];
                *v = 0.999 * *v + 0.001 * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                value.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::param::{GradAccum, ParamId};
    use crate::numerics::tape::Tape;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::row(&[5.0, -3.0]), true).unwrap();
        let mut opt = Adam::new(&store, 0.1, Some(1.0));
        for _ in 0..500 {
            let mut accum = GradAccum::new(&store);
            {
                let mut tape = Tape::new(&store);
                let x = tape.param(ParamId(0));
                let sq = tape.mul(x, x).unwrap();
                let loss = tape.sum_all(sq);
                tape.backward(loss, &mut accum, 1.0).unwrap();
            }
            store.load_grads(&accum);
            opt.step(&mut store);
        }
        for v in store.value(ParamId(0)).data() {
            assert!(v.abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn frozen_params_never_move() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(&[1.0]), true).unwrap();
        store.add("frozen", Tensor::row(&[2.0]), false).unwrap();
        let digest = store.frozen_digest();
        let mut opt = Adam::new(&store, 0.1, None);
        for _ in 0..10 {
            let mut accum = GradAccum::new(&store);
            {
                let mut tape = Tape::new(&store);
                let w = tape.param(ParamId(0));
                let f = tape.param(ParamId(1));
                let y = tape.mul(w, f).unwrap();
                let loss = tape.sum_all(y);
                tape.backward(loss, &mut accum, 1.0).unwrap();
            }
            store.load_grads(&accum);
            opt.step(&mut store);
        }
        assert_eq!(store.frozen_digest(), digest);
        assert_eq!(store.value(ParamId(1)).data(), &[2.0]);
        assert_ne!(store.value(ParamId(0)).data(), &[1.0]);
    }
}
