//! Reverse-mode automatic differentiation over shaped f64 tensors.
//!
//! The engine is a dynamic tape: every tracked operation allocates a fresh
//! node holding its forward value plus a closure that scatters the output
//! gradient into the operation's inputs. Gradients accumulate (never
//! overwrite), so a tensor feeding multiple consumers receives the sum of
//! all downstream contributions.
//!
//! Everything is 64-bit. Graph construction and backward for a single graph
//! are single-threaded; forward ops are pure functions of their inputs.

mod check;
mod ops;
mod optim;

pub use check::finite_diff_check;
pub use optim::{AdamW, AdamWConfig};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` with graph recording disabled on this thread.
///
/// Used by samplers and finite-difference probes where only forward values
/// are needed.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
    parents: Vec<Tensor>,
}

/// Shared handle to a tape node. Cloning is cheap and aliases the same
/// storage, which is how parameters persist across training steps while
/// each step builds a fresh graph on top of them.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<RefCell<Node>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.node.borrow();
        f.debug_struct("Tensor")
            .field("id", &n.id)
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn from_node(node: Node) -> Self {
        Tensor {
            node: Rc::new(RefCell::new(node)),
        }
    }

    /// Leaf tensor with explicit data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
            backward: None,
            parents: Vec::new(),
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n]).expect("zeros shape")
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![1.0; n]).expect("ones shape")
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(&[1], vec![v]).expect("scalar")
    }

    /// Standard-normal init scaled by `scale`.
    pub fn randn(shape: &[usize], scale: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = crate::rng::normal_vec(rng, n).iter().map(|v| v * scale).collect();
        Tensor::from_vec(shape, data).expect("randn shape")
    }

    /// Uniform init on `(-bound, bound)`; used for fan-in-scaled weights.
    pub fn rand_uniform(shape: &[usize], bound: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        use rand::Rng;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::from_vec(shape, data).expect("rand_uniform shape")
    }

    pub(crate) fn result_of(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Self {
        let tracked = backward.is_some();
        Tensor::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: None,
            requires_grad: false,
            backward: if tracked { backward } else { None },
            parents: if tracked { parents } else { Vec::new() },
        })
    }

    pub fn id(&self) -> u64 {
        self.node.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().data.len()
    }

    /// Borrow the forward data without copying.
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.node.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let n = self.node.borrow();
        assert_eq!(n.data.len(), 1, "item() on tensor of {} elements", n.data.len());
        n.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    /// Mark a leaf as trainable (or not). Graph nodes are tracked through
    /// their backward closure instead.
    pub fn set_requires_grad(&self, on: bool) {
        self.node.borrow_mut().requires_grad = on;
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Overwrite the stored values in place (no graph interaction).
    pub fn set_data(&self, data: &[f64]) {
        let mut n = self.node.borrow_mut();
        assert_eq!(n.data.len(), data.len(), "set_data length mismatch");
        n.data.copy_from_slice(data);
    }

    /// Add `delta` to one entry in place. Used by finite-difference probes.
    pub fn nudge(&self, index: usize, delta: f64) {
        self.node.borrow_mut().data[index] += delta;
    }

    /// Whether this tensor participates in gradient propagation.
    pub fn tracked(&self) -> bool {
        let n = self.node.borrow();
        n.requires_grad || n.backward.is_some()
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut n = self.node.borrow_mut();
        let grad = n.grad.get_or_insert_with(|| vec![0.0; contribution.len()]);
        debug_assert_eq!(grad.len(), contribution.len());
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.node.borrow().data.iter().all(|v| v.is_finite())
    }

    /// Run the backward pass from a scalar output, accumulating gradients
    /// into every tracked tensor that fed it.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for tensor in order.iter().rev() {
            let node = tensor.node.borrow();
            if let (Some(grad), Some(backward)) = (node.grad.as_ref(), node.backward.as_ref()) {
                backward(grad);
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        // Iterative DFS; graphs can be a few thousand nodes deep.
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((tensor, child_idx)) = stack.pop() {
            let next_child = {
                let node = tensor.node.borrow();
                node.parents.get(child_idx).cloned()
            };
            match next_child {
                Some(child) => {
                    stack.push((tensor, child_idx + 1));
                    if child.tracked() && visited.insert(child.id()) {
                        stack.push((child, 0));
                    }
                }
                None => order.push(tensor),
            }
        }
        order
    }
}

pub(crate) fn tracking(inputs: &[&Tensor]) -> bool {
    grad_enabled() && inputs.iter().any(|t| t.tracked())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_roundtrip() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.shape(), vec![2, 2]);
        assert_eq!(t.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(!t.requires_grad());
    }

    #[test]
    fn bad_shape_rejected() {
        let err = Tensor::from_vec(&[2, 3], vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::Dim(_)));
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn gradients_accumulate_across_consumers() {
        // y = x*x + x*x: dy/dx = 4x
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        x.set_requires_grad(true);
        let a = x.mul(&x).unwrap();
        let b = x.mul(&x).unwrap();
        let y = a.add(&b).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        x.set_requires_grad(true);
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.tracked());
    }

    #[test]
    fn second_backward_adds_onto_existing_grads() {
        let x = Tensor::from_vec(&[1], vec![5.0]).unwrap();
        x.set_requires_grad(true);
        for _ in 0..2 {
            let y = x.mul(&x).unwrap();
            y.backward().unwrap();
        }
        assert_eq!(x.grad().unwrap(), vec![20.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }
}
