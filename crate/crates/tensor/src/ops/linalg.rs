use crate::error::{shape_err, Result};
use crate::gemm::{gemm, View, ViewMut};
use crate::graph::{slot, Graph, Node, Op, Var};

impl<'p> Graph<'p> {
    /// Matrix product `[p×q]·[q×r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.rows_cols(a, "matmul")?;
        let (q2, r) = self.rows_cols(b, "matmul")?;
        if q != q2 {
            return Err(shape_err("matmul", format!("[{p}x{q}] x [{q2}x{r}]")));
        }
        let mut out = vec![0.0; p * r];
        gemm(1.0, View::dense(self.value(a), p, q), View::dense(self.value(b), q, r), 0.0, ViewMut::dense(&mut out, p, r));
        Ok(self.push_op(vec![p, r], out, Op::MatMul { a, b }, &[a, b]))
    }

    /// Add a length-`c` bias to every row of a `[r×c]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.rows_cols(a, "add_row")?;
        if self.value(bias).len() != c {
            return Err(shape_err("add_row", format!("bias {:?} for {c} columns", self.shape(bias))));
        }
        let bv = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        Ok(self.push_op(vec![r, c], out, Op::AddRow { a, bias }, &[a, bias]))
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }
}

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    match nodes[i].op {
        Op::MatMul { a, b } => {
            let (p, q) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let r = nodes[b.0].shape[1];
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(s) = slot(nodes, grads, a) {
                // dA += dOut · Bᵀ
                gemm(1.0, View::dense(g, p, r), View::dense_t(bv, q, r), 1.0, ViewMut::dense(s, p, q));
            }
            if let Some(s) = slot(nodes, grads, b) {
                // dB += Aᵀ · dOut
                gemm(1.0, View::dense_t(av, p, q), View::dense(g, p, r), 1.0, ViewMut::dense(s, q, r));
            }
        }
        Op::AddRow { a, bias } => {
            let c = nodes[a.0].shape[1];
            if let Some(s) = slot(nodes, grads, a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(nodes, grads, bias) {
                for row in g.chunks_exact(c) {
                    s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                }
            }
        }
        _ => unreachable!("not a linalg op"),
    }
}
