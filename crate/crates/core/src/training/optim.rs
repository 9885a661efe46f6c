use crate::numerics::{ParamStore, Tensor2};
use crate::scalar::Scalar;

/// `base · (1 - step / total)^power`, reaching 0 at `total`.
pub fn poly_lr(base: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = 1.0 - (step.min(total) as f64 / total as f64);
    base * frac.powf(power)
}

/// Adam with decoupled weight decay on parameters flagged for decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: u64,
    m: Vec<Tensor2<T>>,
    v: Vec<Tensor2<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor2::zeros(p.tensor.rows(), p.tensor.cols()))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from the gradients stored on each parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        let decay = T::one() - lr * T::of(self.weight_decay);
        for (k, p) in store.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let shrink = if p.decay { decay } else { T::one() };
            for (((w, &g), m), v) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m)
                .zip(v)
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *w = *w * shrink - lr * update;
            }
        }
    }
}
