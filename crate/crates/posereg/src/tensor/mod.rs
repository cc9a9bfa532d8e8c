//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tensor`] is a handle to a node in a dynamically built compute graph.
//! Operations in [`ops`] create new nodes and register backward rules;
//! [`backward`] walks the graph in reverse topological order and accumulates
//! gradients into every reachable node that requires them.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{invalid, Error, Result};

pub mod ops;
pub mod optim;

pub use optim::{lr_schedule, sgd_momentum_step, OptimizerState};

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Handle to a value in the compute graph. Cloning is shallow.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<RefCell<Node>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return invalid(format!(
                "shape {:?} implies {} elements but {} values given",
                shape,
                n,
                values.len()
            ));
        }
        Ok(Self::from_parts(shape, values, requires_grad, Vec::new(), None))
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Tensor {
        let n: usize = shape.iter().product();
        Self::from_parts(shape, vec![0.0; n], requires_grad, Vec::new(), None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::from_parts(vec![1], vec![v], false, Vec::new(), None)
    }

    fn from_parts(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        let n = values.len();
        Tensor {
            node: Rc::new(RefCell::new(Node {
                shape,
                values,
                grad: vec![0.0; n],
                requires_grad,
                parents,
                backward,
            })),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Self::from_parts(shape, values, requires_grad, parents, Some(backward))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.node.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    pub fn values(&self) -> Vec<f64> {
        self.node.borrow().values.clone()
    }

    pub fn grad(&self) -> Vec<f64> {
        self.node.borrow().grad.clone()
    }

    pub fn item(&self) -> f64 {
        let n = self.node.borrow();
        assert_eq!(n.values.len(), 1, "item() on non-scalar tensor");
        n.values[0]
    }

    pub fn zero_grad(&self) {
        let mut n = self.node.borrow_mut();
        n.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Replace the stored values. Length must match; the graph above this
    /// node (if any) becomes stale, so this is meant for leaf tensors.
    pub fn set_values(&self, values: &[f64]) {
        let mut n = self.node.borrow_mut();
        assert_eq!(n.values.len(), values.len(), "set_values length mismatch");
        n.values.copy_from_slice(values);
    }

    pub(crate) fn add_to_grad(&self, delta: &[f64]) {
        let mut n = self.node.borrow_mut();
        debug_assert_eq!(n.grad.len(), delta.len());
        for (g, d) in n.grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Apply `f` to the stored values without cloning.
    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.node.borrow().values)
    }

    pub(crate) fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.node.borrow_mut().values)
    }

    pub(crate) fn update_grad(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.node.borrow_mut().grad)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.node.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

/// Accumulate d(objective)/d(t) into the grad buffer of every tensor
/// reachable from `objective`. The seed gradient is 1.
pub fn backward(objective: &Tensor) -> Result<()> {
    if objective.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "backward requires a scalar objective, got shape {:?}",
            objective.shape()
        )));
    }
    objective.update_grad(|g| g[0] += 1.0);

    // Iterative post-order DFS for the topological order.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(objective.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.key()) {
            continue;
        }
        let parents = t.node.borrow().parents.clone();
        stack.push((t.clone(), true));
        for p in parents {
            if !visited.contains(&p.key()) {
                stack.push((p, false));
            }
        }
    }

    for t in order.iter().rev() {
        if !t.requires_grad() {
            continue;
        }
        let f_and_grad = {
            let n = t.node.borrow();
            n.backward.as_ref().map(|_| n.grad.clone())
        };
        if let Some(grad) = f_and_grad {
            let n = t.node.borrow();
            if let Some(f) = &n.backward {
                f(&grad);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::ops::*;
    use super::*;

    #[test]
    fn grad_of_parameter_objective_is_one() {
        let p = Tensor::new(vec![1], vec![3.0], true).unwrap();
        backward(&p).unwrap();
        assert_eq!(p.grad(), vec![1.0]);
    }

    #[test]
    fn non_scalar_objective_rejected() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0], true).unwrap();
        assert!(backward(&t).is_err());
    }

    #[test]
    fn shape_value_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![1.0], false).is_err());
    }

    #[test]
    fn grad_zero_after_creation_and_zero_grad() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
        assert_eq!(t.grad(), vec![0.0; 3]);
        let s = scale(&t, 2.0);
        let total = sum(&s);
        backward(&total).unwrap();
        assert_eq!(t.grad(), vec![2.0; 3]);
        t.zero_grad();
        assert_eq!(t.grad(), vec![0.0; 3]);
    }

    #[test]
    fn fan_out_accumulates_both_contributions() {
        // y = sum(x) + 2*sum(x): each element's grad is 3.
        let x = Tensor::new(vec![2], vec![1.0, 4.0], true).unwrap();
        let a = sum(&x);
        let b = scale(&sum(&x), 2.0);
        let y = add(&a, &b).unwrap();
        backward(&y).unwrap();
        assert_eq!(x.grad(), vec![3.0, 3.0]);
    }
}
