//! Reverse-mode automatic differentiation over dense n-d arrays.
//!
//! A [`Tape`] records every operation as a node holding its forward value,
//! its parent nodes, and a closure computing parent gradient contributions.
//! Calling [`Tape::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients for every node, including leaves.
//!
//! The element type is generic so the same graph code runs in `f32` for
//! training and in `f64` for finite-difference gradient verification.

mod conv;
mod ops;

pub use conv::{conv2d_out_size, deconv2d_out_size};

use ndarray::{ArrayD, ScalarOperand};
use std::cell::RefCell;
use std::fmt::Debug;

/// Scalar element type usable on a tape.
pub trait Element:
    num_traits::Float
    + num_traits::FromPrimitive
    + ScalarOperand
    + ndarray::LinalgScalar
    + std::ops::AddAssign
    + std::iter::Sum
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Gradient function: receives the node's output gradient, its parent values,
/// and its own forward value; returns one gradient array per parent.
type GradFn<T> = Box<dyn Fn(&ArrayD<T>, &[&ArrayD<T>], &ArrayD<T>) -> Vec<ArrayD<T>>>;

struct Node<T: Element> {
    value: ArrayD<T>,
    parents: Vec<usize>,
    grad_fn: Option<GradFn<T>>,
}

/// Recording tape for reverse-mode differentiation.
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert an input node; leaves receive gradients but have no parents.
    pub fn leaf(&self, value: ArrayD<T>) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub(crate) fn push(&self, value: ArrayD<T>, parents: Vec<usize>, grad_fn: Option<GradFn<T>>) -> Var {
        // Keep every stored value in standard layout so reshapes stay cheap and valid.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            grad_fn,
        });
        Var(id)
    }

    /// Clone of a node's forward value.
    pub fn value(&self, v: Var) -> ArrayD<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Forward value of a scalar node.
    pub fn scalar(&self, v: Var) -> T {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.0].value;
        assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        *val.iter().next().unwrap()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Apply `f` to a node's forward value without cloning it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&ArrayD<T>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    /// Reverse pass from a scalar root. Returns gradients for every node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.0].value.len(),
            1,
            "backward() requires a scalar root"
        );
        let mut grads: Vec<Option<ArrayD<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::from_elem(nodes[root.0].value.raw_dim(), T::one()));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || nodes[i].grad_fn.is_none() {
                continue;
            }
            let g = grads[i].take().unwrap();
            let node = &nodes[i];
            let parent_vals: Vec<&ArrayD<T>> =
                node.parents.iter().map(|&p| &nodes[p].value).collect();
            let contribs = node.grad_fn.as_ref().unwrap()(&g, &parent_vals, &node.value);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (&p, c) in node.parents.iter().zip(contribs) {
                debug_assert_eq!(c.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                match &mut grads[p] {
                    Some(acc) => *acc += &c,
                    slot => *slot = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// Result of a backward pass.
pub struct Gradients<T: Element> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the root with respect to node `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape when no path reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> ArrayD<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(ndarray::IxDyn(shape)),
        }
    }
}

#[cfg(test)]
mod tests;
