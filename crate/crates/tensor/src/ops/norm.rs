use crate::error::{shape_err, Result};
use crate::graph::{slot, Graph, Node, Op, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics of one training batch. `var` is the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Running mean/variance maintained across training batches.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    /// Initial state: mean 0, variance 1.
    pub fn new(channels: usize, momentum: f64) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels], momentum }
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update(&mut self, batch: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the rows in this call.
    Train,
    /// Normalize with fixed running statistics.
    Infer { mean: &'a [f64], var: &'a [f64] },
}

impl<'p> Graph<'p> {
    /// Normalize each row over its last dimension, then `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if d < 2 {
            return Err(shape_err("layer_norm", "normalized dimension must be at least 2"));
        }
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(shape_err("layer_norm", format!("affine params for width {d}")));
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let n = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; xv.len()];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let keep = self.wants_grad(&[x, gamma, beta]);
        let op = if keep {
            Op::LayerNorm { x, gamma, beta, xhat, inv_std }
        } else {
            Op::Leaf
        };
        Ok(self.push_op(shape, out, op, &[x, gamma, beta]))
    }

    /// Batch normalization of a `[n×c]` matrix over its rows, per column.
    /// In training mode the batch statistics are returned for a running update.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (n, c) = self.rows_cols(x, "batch_norm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err("batch_norm", format!("affine params for {c} channels")));
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                for row in xv.chunks_exact(c) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for row in xv.chunks_exact(c) {
                    for j in 0..c {
                        var[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let unbiased = if n > 1 {
                    var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
            BatchNormMode::Infer { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("batch_norm", format!("running stats for {c} channels")));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for r in 0..n {
            for j in 0..c {
                let h = (xv[r * c + j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = gv[j] * h + bv[j];
            }
        }
        let training = matches!(mode, BatchNormMode::Train);
        let op = if self.wants_grad(&[x, gamma, beta]) {
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, training }
        } else {
            Op::Leaf
        };
        Ok((self.push_op(vec![n, c], out, op, &[x, gamma, beta]), stats))
    }
}

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    match &nodes[i].op {
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let d = *nodes[i].shape.last().unwrap();
            let gv = &nodes[gamma.0].value;
            if let Some(s) = slot(nodes, grads, *gamma) {
                for (hr, gr) in xhat.chunks_exact(d).zip(g.chunks_exact(d)) {
                    for j in 0..d {
                        s[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *beta) {
                for gr in g.chunks_exact(d) {
                    s.iter_mut().zip(gr).for_each(|(s, g)| *s += g);
                }
            }
            if let Some(s) = slot(nodes, grads, *x) {
                let mut dh = vec![0.0; d];
                for r in 0..inv_std.len() {
                    let hr = &xhat[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    for j in 0..d {
                        dh[j] = gr[j] * gv[j];
                    }
                    let sum_dh: f64 = dh.iter().sum();
                    let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                    let k = inv_std[r] / d as f64;
                    let sr = &mut s[r * d..(r + 1) * d];
                    for j in 0..d {
                        sr[j] += k * (d as f64 * dh[j] - sum_dh - hr[j] * sum_dh_h);
                    }
                }
            }
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, training } => {
            let (n, c) = (nodes[i].shape[0], nodes[i].shape[1]);
            let gv = &nodes[gamma.0].value;
            if let Some(s) = slot(nodes, grads, *gamma) {
                for (hr, gr) in xhat.chunks_exact(c).zip(g.chunks_exact(c)) {
                    for j in 0..c {
                        s[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *beta) {
                for gr in g.chunks_exact(c) {
                    s.iter_mut().zip(gr).for_each(|(s, g)| *s += g);
                }
            }
            if let Some(s) = slot(nodes, grads, *x) {
                if *training {
                    let mut sum_dh = vec![0.0; c];
                    let mut sum_dh_h = vec![0.0; c];
                    for r in 0..n {
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            sum_dh[j] += dh;
                            sum_dh_h[j] += dh * xhat[r * c + j];
                        }
                    }
                    for r in 0..n {
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            s[r * c + j] += inv_std[j] / n as f64
                                * (n as f64 * dh - sum_dh[j] - xhat[r * c + j] * sum_dh_h[j]);
                        }
                    }
                } else {
                    for r in 0..n {
                        for j in 0..c {
                            s[r * c + j] += g[r * c + j] * gv[j] * inv_std[j];
                        }
                    }
                }
            }
        }
        _ => unreachable!("not a norm op"),
    }
}
