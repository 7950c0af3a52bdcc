//! Define-by-run computation graph.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep. A graph built
//! with [`Graph::inference`] records no op history and allocates no gradient
//! storage; only values are kept.

use std::borrow::Cow;
use std::cell::Cell;

use crate::error::{shape_err, Result, TensorError};
use crate::param::{Grads, ParamId, ParamStore};

thread_local! {
    static RECORDED: Cell<u64> = const { Cell::new(0) };
}

/// Number of differentiable op records created on the current thread.
pub fn recorded_ops() -> u64 {
    RECORDED.with(|c| c.get())
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Maximum { a: Var, b: Var },
    Minimum { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, c: f64 },
    Offset { a: Var },
    Relu { a: Var },
    Sigmoid { a: Var },
    Ln { a: Var, eps: f64 },
    Square { a: Var },
    Sum { a: Var },
    Reshape { a: Var },
    Gather { a: Var, idx: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { a: Var, b: Var },
    SliceRows { a: Var, start: usize },
    MeanRows { a: Var, mask: Option<Vec<bool>> },
    TileRows { a: Var },
    SoftmaxRows { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, training: bool },
    Attention { q: Var, k: Var, v: Var, heads: usize },
    Conv2d { x: Var, w: Var, b: Var, geom: crate::ops::conv::ConvGeometry, cols: Vec<f64> },
}

pub(crate) struct Node<'p> {
    pub shape: Vec<usize>,
    pub value: Cow<'p, [f64]>,
    pub op: Op,
    pub requires_grad: bool,
    pub param: Option<ParamId>,
    /// Side output kept regardless of recording mode (attention probabilities).
    pub aux: Vec<f64>,
}

pub struct Graph<'p> {
    pub(crate) nodes: Vec<Node<'p>>,
    pub(crate) grads: Vec<Vec<f64>>,
    record: bool,
}

impl<'p> Graph<'p> {
    /// Graph that records ops for a later [`Graph::backward`].
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), record: true }
    }

    /// Value-only graph: no op records, no gradient buffers.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        check_len("constant", shape, values.len())?;
        Ok(self.push_leaf(shape.to_vec(), Cow::Owned(values), false, None))
    }

    /// Free input that receives a gradient (e.g. for gradient checks).
    pub fn input(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        check_len("input", shape, values.len())?;
        let rg = self.record;
        Ok(self.push_leaf(shape.to_vec(), Cow::Owned(values), rg, None))
    }

    /// Bind a stored parameter as a leaf without copying its values.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = self.record;
        self.push_leaf(p.shape.clone(), Cow::Borrowed(&p.value), rg, Some(id))
    }

    /// Bind a parameter by name.
    pub fn param_named(&mut self, store: &'p ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        Ok(self.param(store, id))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, rg: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { shape, value, op: Op::Leaf, requires_grad: rg, param, aux: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    /// Append an op output. `inputs` decide whether the op is recorded.
    pub(crate) fn push_op(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let rg = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg {
            RECORDED.with(|c| c.set(c.get() + 1));
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node { shape, value: Cow::Owned(value), op, requires_grad: rg, param: None, aux: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    /// Whether an op output would be recorded; lets ops skip saving buffers.
    pub(crate) fn wants_grad(&self, inputs: &[Var]) -> bool {
        self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a non-scalar node");
        val[0]
    }

    /// Gradient populated by [`Graph::backward`]; `None` when the node got none.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).filter(|g| !g.is_empty()).map(|g| g.as_slice())
    }

    /// Side output of an attention node: probabilities laid out `[heads, queries, keys]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        let aux = &self.nodes[v.0].aux;
        (!aux.is_empty()).then_some(aux.as_slice())
    }

    pub(crate) fn rows_cols(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.grads = vec![Vec::new(); self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if self.grads[i].is_empty() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let gout = std::mem::take(&mut self.grads[i]);
            crate::ops::backward(&self.nodes, i, &gout, &mut self.grads);
            self.grads[i] = gout;
        }
        Ok(())
    }

    /// Add gradients of every bound parameter into `grads`, scaled by `scale`.
    pub fn accumulate_param_grads(&self, grads: &mut Grads, scale: f64) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, self.grads.get(i)) {
                if !g.is_empty() {
                    grads.add_scaled(id, g, scale);
                }
            }
        }
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn check_len(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(shape_err(op, format!("dimensions must be positive, got {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(shape_err(op, format!("shape {shape:?} needs {n} values, got {len}")));
    }
    Ok(())
}

/// Gradient slot for input `j`, allocated on first use; `None` if `j` needs no gradient.
pub(crate) fn slot<'g>(nodes: &[Node<'_>], grads: &'g mut [Vec<f64>], j: Var) -> Option<&'g mut [f64]> {
    if !nodes[j.0].requires_grad {
        return None;
    }
    let g = &mut grads[j.0];
    if g.is_empty() {
        *g = vec![0.0; nodes[j.0].value.len()];
    }
    Some(g.as_mut_slice())
}
