//! Parameter storage, layers and optimizers on top of [`crate::tensor`].

mod layers;
mod optim;

pub use layers::{Act, Conv2d, ConvBlock, Linear, LstmCell, ResBlock, UpBlock};
pub use optim::{Adam, Sgd};

use crate::tensor::{Float, Grads, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named learnable tensors of one model. Frozen stores hand out untracked
/// tensors, so gradients still flow through them to their inputs but never
/// reach the parameters themselves.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Float> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    frozen: bool,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), frozen: false }
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, data: Vec<T>, shape: &[usize]) -> ParamId {
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        let t = if self.frozen { Tensor::from_vec(data, shape) } else { Tensor::param(data, shape) };
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        for t in &mut self.tensors {
            *t = t.detach();
        }
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
        for t in &mut self.tensors {
            *t = t.as_param();
        }
    }

    /// Replaces the values of one parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, data: Vec<T>) {
        let shape = self.tensors[id.0].shape().to_vec();
        self.tensors[id.0] = if self.frozen { Tensor::from_vec(data, &shape) } else { Tensor::param(data, &shape) };
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// L2 norm of the gradients of this store's parameters.
    pub fn grad_norm(&self, grads: &Grads<T>) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| grads.get(t))
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// SHA-256 over names, shapes and values widened to `f64`.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        let mut out = ParamStore::<U>::new();
        for (name, t) in self.iter() {
            out.add(name.to_string(), t.cast::<U>().to_vec(), t.shape());
        }
        if self.frozen {
            out.freeze();
        }
        out
    }
}

/// Registers parameters under a dotted path prefix with seeded init.
pub struct Builder<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Float> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn pp(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(dist.sample(self.rng))).collect();
        self.store.add(self.path(name), data, shape)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(dist.sample(self.rng))).collect();
        self.store.add(self.path(name), data, shape)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        self.store.add(self.path(name), vec![T::zero(); n], shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let n: usize = shape.iter().product();
        self.store.add(self.path(name), vec![T::of(value); n], shape)
    }
}

/// Deterministic stream for one named purpose under a run seed.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_paths_and_determinism() {
        let make = || {
            let mut store = ParamStore::<f32>::new();
            let mut rng = seeded_rng(3, "init");
            let mut b = Builder::new(&mut store, &mut rng);
            let mut enc = b.pp("enc");
            enc.pp("conv1").normal("weight", &[2, 3], 0.02);
            b.zeros("bias", &[2]);
            store
        };
        let (a, b) = (make(), make());
        assert_eq!(a.name(ParamId(0)), "enc.conv1.weight");
        assert_eq!(a.name(ParamId(1)), "bias");
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn frozen_store_blocks_parameter_grads_but_not_input_grads() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w".into(), vec![2.0], &[1]);
        store.freeze();
        let x = Tensor::param(vec![3.0], &[1]);
        let y = x.mul(store.get(w)).sum_all();
        let g = y.backward();
        assert_eq!(g.wrt(&x), vec![2.0]);
        assert!(g.get(store.get(w)).is_none());
    }

    #[test]
    fn cast_preserves_f32_values_exactly() {
        let mut store = ParamStore::<f32>::new();
        store.add("w".into(), vec![0.1, -3.25e-7], &[2]);
        let back = store.cast::<f64>().cast::<f32>();
        assert_eq!(store.fingerprint(), back.fingerprint());
    }
}
