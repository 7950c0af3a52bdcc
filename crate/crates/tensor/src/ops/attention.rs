use crate::error::{shape_err, Result, TensorError};
use crate::gemm::{gemm, View, ViewMut};
use crate::graph::{slot, Graph, Node, Op, Var};

use super::softmax::{softmax_row, softmax_row_backward};

impl<'p> Graph<'p> {
    /// Multi-head scaled dot-product attention on pre-projected inputs.
    ///
    /// `q` is `[p×d]`, `k` and `v` are `[s×d]`. Head `h` uses columns
    /// `[h·d/m, (h+1)·d/m)` and scores are divided by `sqrt(d/m)`. Keys with
    /// `key_mask[j] == false` get exactly zero weight. Heads are concatenated
    /// back into `[p×d]`; the weights are kept as `[m, p, s]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, key_mask: Option<&[bool]>, heads: usize) -> Result<Var> {
        let (p, d) = self.rows_cols(q, "attention")?;
        let (s, dk) = self.rows_cols(k, "attention")?;
        let (s2, dv) = self.rows_cols(v, "attention")?;
        if dk != d || dv != d || s2 != s {
            return Err(shape_err("attention", format!("q [{p}x{d}], k [{s}x{dk}], v [{s2}x{dv}]")));
        }
        if heads == 0 || d % heads != 0 {
            return Err(shape_err("attention", format!("{heads} heads do not divide width {d}")));
        }
        if let Some(m) = key_mask {
            if m.len() != s {
                return Err(shape_err("attention", format!("key mask of {} for {s} keys", m.len())));
            }
            if !m.iter().any(|&x| x) {
                return Err(TensorError::InvalidMask { op: "attention", row: 0 });
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * p * s];
        let mut out = vec![0.0; p * d];
        for h in 0..heads {
            let ph = &mut probs[h * p * s..(h + 1) * p * s];
            gemm(
                scale,
                View::col_block(qv, p, d, h * dh, dh),
                View::col_block(kv, s, d, h * dh, dh).t(),
                0.0,
                ViewMut::dense(ph, p, s),
            );
            for row in ph.chunks_exact_mut(s) {
                match key_mask {
                    Some(m) => softmax_row(row, |j| m[j]),
                    None => softmax_row(row, |_| true),
                };
            }
            gemm(
                1.0,
                View::dense(ph, p, s),
                View::col_block(vv, s, d, h * dh, dh),
                0.0,
                ViewMut::col_block(&mut out, p, d, h * dh, dh),
            );
        }
        let var = self.push_op(vec![p, d], out, Op::Attention { q, k, v, heads }, &[q, k, v]);
        self.nodes[var.0].aux = probs;
        Ok(var)
    }
}

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    let Op::Attention { q, k, v, heads } = nodes[i].op else { unreachable!() };
    let (p, d) = (nodes[q.0].shape[0], nodes[q.0].shape[1]);
    let s = nodes[k.0].shape[0];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let probs = &nodes[i].aux;
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let mut dp = vec![0.0; p * s];
    let mut ds = vec![0.0; p * s];
    for h in 0..heads {
        let ph = &probs[h * p * s..(h + 1) * p * s];
        let g_h = View::col_block(g, p, d, h * dh, dh);
        if let Some(sv) = slot(nodes, grads, v) {
            // dV_h += Pᵀ · dO_h
            gemm(1.0, View::dense_t(ph, p, s), g_h, 1.0, ViewMut::col_block(sv, s, d, h * dh, dh));
        }
        if !(nodes[q.0].requires_grad || nodes[k.0].requires_grad) {
            continue;
        }
        // dP = dO_h · V_hᵀ
        gemm(1.0, g_h, View::col_block(vv, s, d, h * dh, dh).t(), 0.0, ViewMut::dense(&mut dp, p, s));
        ds.fill(0.0);
        for r in 0..p {
            softmax_row_backward(&ph[r * s..(r + 1) * s], &dp[r * s..(r + 1) * s], &mut ds[r * s..(r + 1) * s], scale);
        }
        if let Some(sq) = slot(nodes, grads, q) {
            // dQ_h += dS · K_h
            gemm(1.0, View::dense(&ds, p, s), View::col_block(kv, s, d, h * dh, dh), 1.0, ViewMut::col_block(sq, p, d, h * dh, dh));
        }
        if let Some(sk) = slot(nodes, grads, k) {
            // dK_h += dSᵀ · Q_h
            gemm(1.0, View::dense_t(&ds, p, s), View::col_block(qv, p, d, h * dh, dh), 1.0, ViewMut::col_block(sk, s, d, h * dh, dh));
        }
    }
}
