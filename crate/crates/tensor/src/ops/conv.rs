use crate::error::{shape_err, Result};
use crate::gemm::{gemm, View, ViewMut};
use crate::graph::{slot, Graph, Node, Op, Var};

/// Square-kernel 2-D convolution over a channels-last image stored as
/// `[height·width, channels]` (row index `y·width + x`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the weight matrix: one per (ky, kx, channel).
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    /// Visit (output pixel, patch column, input row) for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for oy in 0..oh {
            for ox in 0..ow {
                let o = oy * ow + ox;
                for ky in 0..self.kernel {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.in_h as isize {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.in_w as isize {
                            continue;
                        }
                        let src = iy as usize * self.in_w + ix as usize;
                        f(o, (ky * self.kernel + kx) * self.in_c, src);
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let pl = self.patch_len();
        let c = self.in_c;
        let mut cols = vec![0.0; self.out_h() * self.out_w() * pl];
        self.for_each_tap(|o, col, src| {
            cols[o * pl + col..o * pl + col + c].copy_from_slice(&x[src * c..(src + 1) * c]);
        });
        cols
    }

    fn col2im_add(&self, dcols: &[f64], dx: &mut [f64]) {
        let pl = self.patch_len();
        let c = self.in_c;
        self.for_each_tap(|o, col, src| {
            let from = &dcols[o * pl + col..o * pl + col + c];
            dx[src * c..(src + 1) * c].iter_mut().zip(from).for_each(|(d, g)| *d += g);
        });
    }
}

impl<'p> Graph<'p> {
    /// Convolution with weight `[k·k·in_c, out_c]` and bias `[out_c]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let (rows, c) = self.rows_cols(x, "conv2d")?;
        if rows != geom.in_h * geom.in_w || c != geom.in_c {
            return Err(shape_err("conv2d", format!("input [{rows}x{c}] for geometry {geom:?}")));
        }
        if geom.kernel == 0 || geom.stride == 0 || geom.in_h + 2 * geom.pad < geom.kernel || geom.in_w + 2 * geom.pad < geom.kernel {
            return Err(shape_err("conv2d", format!("degenerate geometry {geom:?}")));
        }
        let (wr, out_c) = self.rows_cols(w, "conv2d")?;
        if wr != geom.patch_len() || self.value(b).len() != out_c {
            return Err(shape_err("conv2d", format!("weight [{wr}x{out_c}] for patch length {}", geom.patch_len())));
        }
        let n_out = geom.out_h() * geom.out_w();
        let cols = geom.im2col(self.value(x));
        let mut out = vec![0.0; n_out * out_c];
        for row in out.chunks_exact_mut(out_c) {
            row.copy_from_slice(self.value(b));
        }
        gemm(1.0, View::dense(&cols, n_out, wr), View::dense(self.value(w), wr, out_c), 1.0, ViewMut::dense(&mut out, n_out, out_c));
        let op = if self.wants_grad(&[x, w, b]) {
            Op::Conv2d { x, w, b, geom, cols }
        } else {
            Op::Leaf
        };
        Ok(self.push_op(vec![n_out, out_c], out, op, &[x, w, b]))
    }
}

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    let Op::Conv2d { x, w, b, geom, cols } = &nodes[i].op else { unreachable!() };
    let (n_out, out_c) = (nodes[i].shape[0], nodes[i].shape[1]);
    let pl = geom.patch_len();
    if let Some(s) = slot(nodes, grads, *w) {
        gemm(1.0, View::dense_t(cols, n_out, pl), View::dense(g, n_out, out_c), 1.0, ViewMut::dense(s, pl, out_c));
    }
    if let Some(s) = slot(nodes, grads, *b) {
        for row in g.chunks_exact(out_c) {
            s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
        }
    }
    if nodes[x.0].requires_grad {
        let mut dcols = vec![0.0; n_out * pl];
        gemm(1.0, View::dense(g, n_out, out_c), View::dense_t(&nodes[w.0].value, pl, out_c), 0.0, ViewMut::dense(&mut dcols, n_out, pl));
        if let Some(s) = slot(nodes, grads, *x) {
            geom.col2im_add(&dcols, s);
        }
    }
}
