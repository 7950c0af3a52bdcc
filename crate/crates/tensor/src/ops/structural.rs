use crate::error::{shape_err, Result};
use crate::graph::{check_len, slot, Graph, Node, Op, Var};

impl<'p> Graph<'p> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        check_len("reshape", shape, self.value(a).len())?;
        let out = self.value(a).to_vec();
        Ok(self.push_op(shape.to_vec(), out, Op::Reshape { a }, &[a]))
    }

    /// Pick flat elements `idx` into a vector of shape `[idx.len()]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(a).len();
        if idx.is_empty() || idx.iter().any(|&k| k >= n) {
            return Err(shape_err("gather", format!("indices {idx:?} for {n} elements")));
        }
        let av = self.value(a);
        let out = idx.iter().map(|&k| av[k]).collect();
        Ok(self.push_op(vec![idx.len()], out, Op::Gather { a, idx: idx.to_vec() }, &[a]))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs"));
        }
        let (_, c) = self.rows_cols(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c2) = self.rows_cols(p, "concat_rows")?;
            if c2 != c {
                return Err(shape_err("concat_rows", format!("column counts {c} vs {c2}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push_op(vec![rows, c], out, Op::ConcatRows { parts: parts.to_vec() }, parts))
    }

    /// Join `[r×c1]` and `[r×c2]` side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c1) = self.rows_cols(a, "concat_cols")?;
        let (r2, c2) = self.rows_cols(b, "concat_cols")?;
        if r != r2 {
            return Err(shape_err("concat_cols", format!("row counts {r} vs {r2}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * (c1 + c2));
        for k in 0..r {
            out.extend_from_slice(&av[k * c1..(k + 1) * c1]);
            out.extend_from_slice(&bv[k * c2..(k + 1) * c2]);
        }
        Ok(self.push_op(vec![r, c1 + c2], out, Op::ConcatCols { a, b }, &[a, b]))
    }

    /// Rows `[start, start + len)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.rows_cols(a, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(shape_err("slice_rows", format!("rows [{start}, {}) of {r}", start + len)));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        Ok(self.push_op(vec![len, c], out, Op::SliceRows { a, start }, &[a]))
    }

    /// Mean over rows (optionally only rows with `mask[r] == true`), shape `[1×c]`.
    pub fn mean_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.rows_cols(a, "mean_rows")?;
        if let Some(m) = mask {
            if m.len() != r {
                return Err(shape_err("mean_rows", format!("mask of {} for {r} rows", m.len())));
            }
            if !m.iter().any(|&x| x) {
                return Err(crate::TensorError::InvalidMask { op: "mean_rows", row: 0 });
            }
        }
        let count = mask.map_or(r, |m| m.iter().filter(|&&x| x).count()) as f64;
        let av = self.value(a);
        let mut out = vec![0.0; c];
        for k in 0..r {
            if mask.is_none_or(|m| m[k]) {
                out.iter_mut().zip(&av[k * c..(k + 1) * c]).for_each(|(o, x)| *o += x);
            }
        }
        out.iter_mut().for_each(|o| *o /= count);
        let op = Op::MeanRows { a, mask: mask.map(|m| m.to_vec()) };
        Ok(self.push_op(vec![1, c], out, op, &[a]))
    }

    /// Repeat a `[1×c]` row `n` times.
    pub fn tile_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.rows_cols(a, "tile_rows")?;
        if r != 1 || n == 0 {
            return Err(shape_err("tile_rows", format!("tile [{r}x{c}] {n} times")));
        }
        let out = self.value(a).repeat(n);
        Ok(self.push_op(vec![n, c], out, Op::TileRows { a }, &[a]))
    }
}

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    match &nodes[i].op {
        Op::Reshape { a } => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
        Op::Gather { a, idx } => {
            if let Some(s) = slot(nodes, grads, *a) {
                for (&k, gk) in idx.iter().zip(g) {
                    s[k] += gk;
                }
            }
        }
        Op::ConcatRows { parts } => {
            let mut off = 0;
            for &p in parts {
                let n = nodes[p.0].value.len();
                if let Some(s) = slot(nodes, grads, p) {
                    s.iter_mut().zip(&g[off..off + n]).for_each(|(s, g)| *s += g);
                }
                off += n;
            }
        }
        Op::ConcatCols { a, b } => {
            let r = nodes[a.0].shape[0];
            let (c1, c2) = (nodes[a.0].shape[1], nodes[b.0].shape[1]);
            let c = c1 + c2;
            if let Some(s) = slot(nodes, grads, *a) {
                for k in 0..r {
                    s[k * c1..(k + 1) * c1].iter_mut().zip(&g[k * c..k * c + c1]).for_each(|(s, g)| *s += g);
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for k in 0..r {
                    s[k * c2..(k + 1) * c2].iter_mut().zip(&g[k * c + c1..(k + 1) * c]).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::SliceRows { a, start } => {
            let c = nodes[a.0].shape[1];
            if let Some(s) = slot(nodes, grads, *a) {
                s[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
        Op::MeanRows { a, mask } => {
            let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let count = mask.as_ref().map_or(r, |m| m.iter().filter(|&&x| x).count()) as f64;
            if let Some(s) = slot(nodes, grads, *a) {
                for k in 0..r {
                    if mask.as_ref().is_none_or(|m| m[k]) {
                        s[k * c..(k + 1) * c].iter_mut().zip(g).for_each(|(s, g)| *s += g / count);
                    }
                }
            }
        }
        Op::TileRows { a } => {
            let c = nodes[a.0].shape[1];
            if let Some(s) = slot(nodes, grads, *a) {
                for row in g.chunks_exact(c) {
                    s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                }
            }
        }
        _ => unreachable!("not a structural op"),
    }
}
