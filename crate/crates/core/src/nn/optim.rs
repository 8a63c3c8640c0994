use super::ParamStore;
use crate::tensor::{Float, Grads};

/// Adam with bias correction. Parameters without a gradient are left alone.
#[derive(Debug, Clone)]
pub struct Adam<T: Float> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| vec![T::zero(); store.get(id).numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::of(self.lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(self.eps);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = grads.get(store.get(id)) else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut p = store.get(id).to_vec();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
            store.set(id, p);
        }
    }
}

/// SGD with classical momentum: `v = μ v + g; p -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Float> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        if self.velocity.len() != store.len() {
            self.velocity = store.ids().map(|id| vec![T::zero(); store.get(id).numel()]).collect();
        }
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = grads.get(store.get(id)) else { continue };
            let vel = &mut self.velocity[k];
            let mut p = store.get(id).to_vec();
            for i in 0..p.len() {
                vel[i] = mu * vel[i] + g[i];
                p[i] -= lr * vel[i];
            }
            store.set(id, p);
        }
    }
}
