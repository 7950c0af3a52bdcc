use crate::error::{shape_err, Result, TensorError};
use crate::graph::{slot, Graph, Node, Op, Var};

/// In-place masked softmax of one row. `valid(j)` selects participating entries;
/// the rest are set to exactly zero. Returns `false` if no entry is valid.
pub(crate) fn softmax_row(row: &mut [f64], valid: impl Fn(usize) -> bool) -> bool {
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in row.iter().enumerate() {
        if valid(j) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        if valid(j) {
            *x = (*x - max).exp();
            total += *x;
        } else {
            *x = 0.0;
        }
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|x| *x *= inv);
    true
}

/// `dx = y ⊙ (dy − Σ y·dy)` for one row.
pub(crate) fn softmax_row_backward(y: &[f64], dy: &[f64], dx: &mut [f64], scale: f64) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yy), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d += scale * yy * (g - dot);
    }
}

impl<'p> Graph<'p> {
    /// Row-wise softmax. With a mask (`true` = keep, row-major like `x`),
    /// masked entries come out exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (p, q) = self.rows_cols(x, "softmax_rows")?;
        if let Some(m) = mask {
            if m.len() != p * q {
                return Err(shape_err("softmax_rows", format!("mask of {} for [{p}x{q}]", m.len())));
            }
        }
        let mut out = self.value(x).to_vec();
        for (r, row) in out.chunks_exact_mut(q).enumerate() {
            let ok = match mask {
                Some(m) => softmax_row(row, |j| m[r * q + j]),
                None => softmax_row(row, |_| true),
            };
            if !ok {
                return Err(TensorError::InvalidMask { op: "softmax_rows", row: r });
            }
        }
        Ok(self.push_op(vec![p, q], out, Op::SoftmaxRows { x }, &[x]))
    }
}

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    let Op::SoftmaxRows { x } = nodes[i].op else { unreachable!() };
    let q = nodes[i].shape[1];
    let y = &nodes[i].value;
    if let Some(s) = slot(nodes, grads, x) {
        for ((yr, gr), sr) in y.chunks_exact(q).zip(g.chunks_exact(q)).zip(s.chunks_exact_mut(q)) {
            softmax_row_backward(yr, gr, sr, 1.0);
        }
    }
}
