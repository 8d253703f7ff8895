//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tensor`] is an immutable, reference-counted node. Operations on
//! tracked tensors record a backward closure together with their parents;
//! [`Tensor::backward`] walks the recorded graph once in reverse
//! topological order and accumulates gradients into the leaves.
//!
//! Gradients are retained on leaves only. Intermediate buffers are released
//! as soon as they have been propagated.

mod conv;
mod elementwise;
pub mod gradcheck;
mod linalg;
mod norm;
mod reduce;
mod sample;
mod shape;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{arg_err, shape_err, Result};

pub use conv::ConvOptions;
pub use norm::BatchStats;

/// Backward closure: receives the output gradient and the output values and
/// returns one optional gradient per parent, in parent order.
pub type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Op {
    name: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<Op>,
}

// Long graphs would otherwise drop recursively, one stack frame per node.
impl Drop for Node {
    fn drop(&mut self) {
        let Some(op) = self.op.take() else {
            return;
        };
        let Op {
            parents, backward, ..
        } = op;
        drop(backward);
        let mut pending = parents;
        while let Some(t) = pending.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.0) {
                if let Some(op) = node.op.take() {
                    drop(op.backward);
                    pending.extend(op.parents);
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Self::raw(data, shape.to_vec(), false, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::raw(vec![value; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::raw(vec![value], Vec::new(), false, None)
    }

    /// A leaf that accumulates gradients.
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::new(data, shape)?.requires_grad())
    }

    /// Returns a tracked leaf sharing this tensor's values.
    pub fn requires_grad(&self) -> Tensor {
        Self::raw(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Returns an untracked copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        if !self.0.requires_grad {
            return self.clone();
        }
        Self::raw(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    fn raw(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            data,
            shape,
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    /// Builds the result of a differentiable operation.
    ///
    /// `backward` is only retained when some parent is tracked and gradient
    /// recording is enabled. It must not capture the output tensor itself.
    pub fn from_op(
        name: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Tensor {
        let tracked = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        let op = tracked.then(|| Op {
            name,
            parents,
            backward: Box::new(backward),
        });
        Self::raw(data, shape, tracked, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|op| op.name)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(shape_err(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape()),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.0.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(crate::Error::NonFinite(op))
        }
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Nodes reachable from `self` through recorded ops, parents before
    /// children. Each node appears once.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(Rc::as_ptr(&self.0));
        while let Some((node, next)) = stack.pop() {
            let parents = node.0.op.as_ref().map(|op| op.parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                let parent = parents[next].clone();
                stack.push((node, next + 1));
                if parent.0.requires_grad && seen.insert(Rc::as_ptr(&parent.0)) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }

    /// Backpropagates from a single-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(arg_err(
                "backward",
                format!("root must hold one element, got shape {:?}", self.shape()),
            ));
        }
        if !self.0.requires_grad {
            return Err(arg_err("backward", "root is not tracked"));
        }
        let order = self.topo_order();
        self.accumulate(vec![1.0]);
        for node in order.iter().rev() {
            let Some(op) = node.0.op.as_ref() else {
                continue;
            };
            let Some(g) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            let grads = (op.backward)(&g, &node.0.data);
            debug_assert_eq!(grads.len(), op.parents.len(), "backward arity of {}", op.name);
            for (parent, pg) in op.parents.iter().zip(grads) {
                if let Some(pg) = pg {
                    if parent.0.requires_grad {
                        debug_assert_eq!(pg.len(), parent.numel(), "grad size from {}", op.name);
                        parent.accumulate(pg);
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("tracked", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}
