//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every op result keeps `Arc` handles to its inputs plus a backward closure,
//! so the graph is the tensors themselves. [`Tensor::backward`] walks it in
//! reverse topological order and returns gradients for the leaves that
//! require them.

mod conv;
mod float;
mod ops;

pub use float::Float;
pub(crate) use float::{gemm, View};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn<T> = Box<dyn Fn(&[Tensor<T>], &[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct GradFn<T: Float> {
    inputs: Vec<Tensor<T>>,
    // (inputs, output data, output grad) -> one optional grad per input
    backward: BackwardFn<T>,
}

struct Node<T: Float> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Float>(Arc<Node<T>>);

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    fn build(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        assert_eq!(data.len(), numel(&shape), "data length {} does not match shape {:?}", data.len(), shape);
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        Self::build(Arc::new(data), shape.to_vec(), false, None)
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Self {
        Self::from_vec(data.iter().map(|&x| T::of(x)).collect(), shape)
    }

    /// Leaf tensor whose gradient is collected by [`Tensor::backward`].
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::build(Arc::new(data), shape.to_vec(), true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(vec![T::zero(); numel(shape)], shape)
    }

    pub fn full(value: T, shape: &[usize]) -> Self {
        Self::from_vec(vec![value; numel(shape)], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(vec![value], &[])
    }

    /// Result of an op. Drops the backward closure when no input is tracked.
    pub(crate) fn from_op<F>(data: Vec<T>, shape: Vec<usize>, inputs: &[&Tensor<T>], backward: F) -> Self
    where
        F: Fn(&[Tensor<T>], &[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            backward: Box::new(backward),
        });
        Self::build(Arc::new(data), shape, requires_grad, grad_fn)
    }

    /// Same storage under a new shape, used by zero-copy views.
    fn share_data(&self, shape: Vec<usize>, grad_fn: Option<GradFn<T>>) -> Self {
        let requires_grad = grad_fn.is_some();
        Self::build(self.0.data.clone(), shape, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        self.share_data(self.shape().to_vec(), None)
    }

    /// Tracked leaf sharing this tensor's values.
    pub fn as_param(&self) -> Self {
        Self::build(self.0.data.clone(), self.shape().to_vec(), true, None)
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor::from_vec(self.data().iter().map(|&x| U::of(x.as_f64())).collect(), self.shape())
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|x| x.is_finite())
    }

    /// Reverse-mode sweep from this scalar.
    pub fn backward(&self) -> Grads<T> {
        assert_eq!(self.numel(), 1, "backward() needs a scalar, got shape {:?}", self.shape());
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        if !self.requires_grad() {
            return Grads { map: grads };
        }

        let order = self.topo_order();
        grads.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(gf) = &node.0.grad_fn else { continue };
            let Some(g) = grads.remove(&node.id()) else { continue };
            let input_grads = (gf.backward)(&gf.inputs, node.data(), &g);
            debug_assert_eq!(input_grads.len(), gf.inputs.len());
            for (input, ig) in gf.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel());
                match grads.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                    None => {
                        grads.insert(input.id(), ig);
                    }
                }
            }
        }
        Grads { map: grads }
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for input in &gf.inputs {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl<T: Float> Drop for Node<T> {
    // Long recurrent chains would otherwise recurse once per graph level.
    fn drop(&mut self) {
        let mut pending: Vec<Tensor<T>> = match self.grad_fn.take() {
            Some(gf) => gf.inputs,
            None => return,
        };
        while let Some(t) = pending.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                if let Some(gf) = node.grad_fn.take() {
                    pending.extend(gf.inputs);
                }
            }
        }
    }
}

/// Gradients of the leaves reached by a backward sweep, keyed by tensor id.
pub struct Grads<T: Float> {
    map: HashMap<u64, Vec<T>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient for `t`, zeros if it was not reached.
    pub fn wrt(&self, t: &Tensor<T>) -> Vec<T> {
        self.get(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); t.numel()])
    }

    /// Multiplies every stored gradient by `s`.
    pub fn scale(&mut self, s: T) {
        for g in self.map.values_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
}
