//! Dense `f32` tensors with reverse-mode differentiation on an eager tape.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) onto shape + flat row-major data +
//! optional gradient. Ops live on [`Tape`]; each call computes the forward
//! value immediately and records one backward closure. [`Tape::backward`]
//! replays the closures exactly once in reverse, so a value used in several
//! places receives the sum of the gradients flowing back through each use.
//!
//! Element-wise ops stay in `f32` end to end; reductions, matrix products and
//! convolutions accumulate in `f64` before rounding once, which keeps them
//! within comparison tolerance of 64-bit references and keeps finite
//! differences stable.

mod conv;
mod elementwise;
mod gradcheck;
mod linalg;
mod reshape;
mod resample;
mod stats;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cell::{Ref, RefCell};
use std::rc::Rc;

struct Inner {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

/// Shared handle to one tensor; clones alias the same storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "data length {} != shape {:?}", data.len(), shape);
        Tensor {
            inner: Rc::new(RefCell::new(Inner { shape, data, grad: None, requires_grad })),
        }
    }

    /// Constant tensor (not differentiated into).
    pub fn new(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::from_parts(shape.to_vec(), data, false)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::from_parts(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn full(shape: &[usize], v: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![v; n])
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::new(&[1], vec![v])
    }

    /// Uniform samples in `[lo, hi)` from a fixed stream; the same seed gives
    /// the same tensor on every platform.
    pub fn seeded(seed: u64, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Borrow of the flat row-major values.
    pub fn data(&self) -> Ref<'_, [f32]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on tensor of {} elements", inner.data.len());
        inner.data[0]
    }

    /// Overwrites the stored values in place (optimizer updates, loading).
    pub fn set_data(&self, data: &[f32]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.borrow_mut().requires_grad = on;
    }

    /// Accumulated gradient, if backward reached this tensor.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(&self.shape(), self.to_vec())
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), g.len(), "gradient length mismatch");
        match &mut inner.grad {
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(g.iter()) {
                    *a += x;
                }
            }
            None => inner.grad = Some(g.to_vec()),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        write!(f, "Tensor{:?}", inner.shape)?;
        if inner.data.len() <= 8 {
            write!(f, " {:?}", inner.data)?;
        }
        Ok(())
    }
}

type Node = Box<dyn FnMut()>;

/// Records one backward closure per differentiable op, in execution order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub(crate) fn record(&self, f: impl FnMut() + 'static) {
        self.nodes.borrow_mut().push(Box::new(f));
    }

    /// Number of recorded ops (ops whose inputs carry no gradient are never
    /// recorded).
    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Seeds `d loss / d loss = 1` and replays every node once, last to
    /// first. `loss` must be a single-element tensor on this tape.
    pub fn backward(&self, loss: &Tensor) {
        assert_eq!(loss.numel(), 1, "backward needs a scalar loss");
        assert!(loss.requires_grad(), "loss does not depend on any parameter");
        loss.accumulate_grad(&[1.0]);
        let mut nodes = self.nodes.borrow_mut();
        for node in nodes.iter_mut().rev() {
            node();
        }
    }

    /// Forgets all recorded ops; tensors and their gradients survive.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// True when any input needs a gradient, so the op must be recorded.
pub(crate) fn any_requires_grad(inputs: &[&Tensor]) -> bool {
    inputs.iter().any(|t| t.requires_grad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clones_alias_storage() {
        let a = Tensor::param(&[2], vec![1.0, 2.0]);
        let b = a.clone();
        b.set_data(&[5.0, 6.0]);
        assert_eq!(a.to_vec(), vec![5.0, 6.0]);
    }

    #[test]
    fn grads_accumulate_additively() {
        let a = Tensor::param(&[2], vec![0.0, 0.0]);
        a.accumulate_grad(&[1.0, 2.0]);
        a.accumulate_grad(&[10.0, 20.0]);
        assert_eq!(a.grad().unwrap(), vec![11.0, 22.0]);
    }

    #[test]
    fn value_used_twice_gets_summed_gradient() {
        // loss = sum(a * a); d/da = 2a, flowing back once through each use.
        let tape = Tape::new();
        let a = Tensor::param(&[3], vec![1.0, -2.0, 3.0]);
        let prod = tape.mul(&a, &a);
        let loss = tape.sum_all(&prod);
        tape.backward(&loss);
        assert_eq!(a.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn constant_branches_are_not_recorded() {
        let tape = Tape::new();
        let a = Tensor::new(&[2], vec![1.0, 2.0]);
        let b = Tensor::new(&[2], vec![3.0, 4.0]);
        let _ = tape.add(&a, &b);
        assert_eq!(tape.node_count(), 0);
        let p = Tensor::param(&[2], vec![1.0, 2.0]);
        let _ = tape.add(&p, &b);
        assert_eq!(tape.node_count(), 1);
    }

    #[test]
    fn seeded_tensors_are_reproducible() {
        let a = Tensor::seeded(42, &[16], -1.0, 1.0);
        let b = Tensor::seeded(42, &[16], -1.0, 1.0);
        let c = Tensor::seeded(43, &[16], -1.0, 1.0);
        assert_eq!(a.to_vec(), b.to_vec());
        assert_ne!(a.to_vec(), c.to_vec());
        assert!(a.to_vec().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn detach_stops_gradient_flow() {
        let tape = Tape::new();
        let a = Tensor::param(&[2], vec![1.0, 2.0]);
        let d = tape.mul(&a, &a).detach();
        assert!(!d.requires_grad());
        let b = Tensor::param(&[2], vec![1.0, 1.0]);
        let loss = tape.sum_all(&tape.mul(&d, &b));
        tape.backward(&loss);
        assert!(a.grad().is_none());
        assert_eq!(b.grad().unwrap(), vec![1.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let a = Tensor::param(&[2], vec![1.0, 2.0]);
        let b = tape.relu(&a);
        tape.backward(&b);
    }
}
