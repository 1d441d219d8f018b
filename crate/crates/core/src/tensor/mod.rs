//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! Every operation returns a fresh [`Tensor`] that remembers its inputs and
//! a backward rule. Calling [`Tensor::backward`] on a scalar walks the graph
//! in reverse topological order and accumulates gradients into every leaf
//! that has `requires_grad` set. Intermediate gradients live only for the
//! duration of one backward call, so calling `backward` twice without
//! zeroing adds the leaf gradients a second time and nothing else.
//!
//! ```
//! use codeswitch::tensor::Tensor;
//!
//! let x = Tensor::param(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
//! let y = x.mul(&x).unwrap().sum();
//! y.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
//! ```

mod gradcheck;
mod ops;
mod params;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub use gradcheck::{grad_check, grad_check_leaves};
pub use ops::Activation;
pub use params::ParamSet;

use crate::error::{Error, Result};

/// Backward rule: `(grad_out, inputs, out_values) -> per-input gradient`.
/// `None` entries mean "no gradient for this input".
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct OpRecord {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    op: Option<OpRecord>,
}

/// A node of the computation graph. Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad.get())
            .field("op", &self.0.op.as_ref().map(|o| o.name))
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    /// A constant (non-differentiable) tensor.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Usage(format!("shape {shape:?} has a zero dimension")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self::leaf(shape, data, false))
    }

    /// A leaf that accumulates gradient.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        t.0.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::leaf(shape, vec![0.0; n], false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![1], vec![v], false)
    }

    /// Builds a `[rows.len(), width]` constant from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 {
            return Err(Error::Usage("from_rows needs at least one non-empty row".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::dim("from_rows", &[width], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), width], data)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            op: None,
        }))
    }

    /// Output of an operation. The op record is dropped when no input needs
    /// gradient, so constant subgraphs are never traversed by `backward`.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let op = requires_grad.then(|| OpRecord {
            name,
            inputs,
            backward,
        });
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.0.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let width = *self.0.shape.last().unwrap();
        self.0.data.borrow()[i * width..(i + 1) * width].to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Toggles gradient tracking on a leaf. Turning it off also drops any
    /// gradient already accumulated.
    pub fn set_requires_grad(&self, on: bool) {
        assert!(self.is_leaf(), "requires_grad can only be toggled on leaves");
        self.0.requires_grad.set(on);
        if !on {
            self.0.grad.replace(None);
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        self.0.grad.replace(None);
    }

    /// Overwrites the values of a leaf in place (optimizer updates,
    /// checkpoint loading, finite-difference probes).
    pub fn set_data(&self, values: &[f64]) {
        assert!(self.is_leaf(), "set_data on a non-leaf tensor");
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), values.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        assert!(self.is_leaf(), "update_data on a non-leaf tensor");
        f(&mut self.0.data.borrow_mut());
    }

    /// A constant copy with no graph history.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.op {
                None => node.accumulate_grad(&g),
                Some(rec) => {
                    let out = node.0.data.borrow();
                    let grads = (rec.backward)(&g, &rec.inputs, &out);
                    debug_assert_eq!(grads.len(), rec.inputs.len(), "{}", rec.name);
                    for (inp, gi) in rec.inputs.iter().zip(grads) {
                        let Some(gi) = gi else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(gi.len(), inp.numel(), "{}", rec.name);
                        match pending.get_mut(&inp.key()) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(inp.key(), gi);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the nodes that need gradient.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // (node, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(rec) = &node.0.op {
                for inp in &rec.inputs {
                    if inp.requires_grad() && !seen.contains(&inp.key()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }
}
