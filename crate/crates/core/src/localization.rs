//! Anchor-free localization: the five-channel head, training targets, the
//! four-term loss and box decoding. Also box geometry (IoU / GIoU).
//!
//! Maps are stored row-major over grid cells: index `y·w + x`.

use pfos_tensor::{Graph, ParamId, ParamStore, Var};

use crate::config::{GiouCell, ModelConfig};
use crate::error::{PfosError, Result};

/// Clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// Box in pixel coordinates, center/size form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { cx: (x1 + x2) / 2.0, cy: (y1 + y2) / 2.0, w: x2 - x1, h: y2 - y1 }
    }

    pub fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// Taken from the corners so a box's area equals its self-intersection exactly.
    pub fn area(&self) -> f64 {
        (self.x2() - self.x1()) * (self.y2() - self.y1())
    }
}

fn overlap(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    (a2.min(b2) - a1.max(b1)).max(0.0)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = overlap(a.x1(), a.x2(), b.x1(), b.x2()) * overlap(a.y1(), a.y2(), b.y1(), b.y2());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU minus the share of the enclosing box not covered by the union.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = overlap(a.x1(), a.x2(), b.x1(), b.x2()) * overlap(a.y1(), a.y2(), b.y1(), b.y2());
    let union = a.area() + b.area() - inter;
    let hull = (a.x2().max(b.x2()) - a.x1().min(b.x1())) * (a.y2().max(b.y2()) - a.y1().min(b.y1()));
    if union <= 0.0 || hull <= 0.0 {
        return 0.0;
    }
    inter / union - (hull - union) / hull
}

/// Per-sample regression target.
#[derive(Clone, Debug, PartialEq)]
pub struct LocTarget {
    /// One-hot indicator over cells.
    pub indicator: Vec<f64>,
    pub cell_x: usize,
    pub cell_y: usize,
    pub dx: f64,
    pub dy: f64,
    /// `W_b / W` and `H_b / H`.
    pub size_w: f64,
    pub size_h: f64,
}

impl LocTarget {
    pub fn cell(&self, grid_w: usize) -> usize {
        self.cell_y * grid_w + self.cell_x
    }
}

pub fn build_target(b: &BBox, cfg: &ModelConfig) -> Result<LocTarget> {
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(PfosError::Validation(format!("degenerate box {b:?}")));
    }
    let (iw, ih) = (cfg.image_w as f64, cfg.image_h as f64);
    if !(b.cx >= 0.0 && b.cx < iw && b.cy >= 0.0 && b.cy < ih) {
        return Err(PfosError::Validation(format!("box center outside the {iw}x{ih} image: {b:?}")));
    }
    let gx = b.cx / cfg.stride_x();
    let gy = b.cy / cfg.stride_y();
    let cell_x = (gx.floor() as usize).min(cfg.grid_w - 1);
    let cell_y = (gy.floor() as usize).min(cfg.grid_h - 1);
    let mut indicator = vec![0.0; cfg.cells()];
    indicator[cell_y * cfg.grid_w + cell_x] = 1.0;
    Ok(LocTarget {
        indicator,
        cell_x,
        cell_y,
        dx: gx - cell_x as f64,
        dy: gy - cell_y as f64,
        size_w: b.w / iw,
        size_h: b.h / ih,
    })
}

/// The five sigmoid maps of the head, each of length `w·h`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub grid_w: usize,
    pub grid_h: usize,
    pub score: Vec<f64>,
    pub tx: Vec<f64>,
    pub ty: Vec<f64>,
    pub tw: Vec<f64>,
    pub th: Vec<f64>,
}

impl HeadOutput {
    /// Split a `[cells × 5]` row-major head activation into maps.
    pub fn from_rows(values: &[f64], grid_w: usize, grid_h: usize) -> Self {
        let col = |c: usize| values.chunks_exact(5).map(|r| r[c]).collect::<Vec<_>>();
        HeadOutput { grid_w, grid_h, score: col(0), tx: col(1), ty: col(2), tw: col(3), th: col(4) }
    }

    /// Maps that reproduce `target` exactly at its cell, with `score` elsewhere.
    pub fn from_target(target: &LocTarget, grid_w: usize, grid_h: usize, score: f64) -> Self {
        let n = grid_w * grid_h;
        let c = target.cell(grid_w);
        let mut out = HeadOutput {
            grid_w,
            grid_h,
            score: vec![score; n],
            tx: vec![0.5; n],
            ty: vec![0.5; n],
            tw: vec![0.5; n],
            th: vec![0.5; n],
        };
        out.score[c] = 1.0 - score;
        out.tx[c] = target.dx;
        out.ty[c] = target.dy;
        out.tw[c] = target.size_w;
        out.th[c] = target.size_h;
        out
    }

    /// Highest-score cell; ties resolve to the first in row-major order.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.score.iter().enumerate() {
            if s > self.score[best] {
                best = i;
            }
        }
        best
    }
}

/// Decoded prediction: the box plus the argmax cell and its score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    pub bbox: BBox,
    pub cell: usize,
    pub score: f64,
}

fn box_at(pred: &HeadOutput, cell: usize, cfg: &ModelConfig) -> BBox {
    let (x, y) = ((cell % pred.grid_w) as f64, (cell / pred.grid_w) as f64);
    BBox::new(
        (x + pred.tx[cell]) * cfg.stride_x(),
        (y + pred.ty[cell]) * cfg.stride_y(),
        pred.tw[cell] * cfg.image_w as f64,
        pred.th[cell] * cfg.image_h as f64,
    )
}

pub fn decode(pred: &HeadOutput, cfg: &ModelConfig) -> Decoded {
    let cell = pred.argmax();
    Decoded { bbox: box_at(pred, cell, cfg), cell, score: pred.score[cell] }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub off: f64,
    pub rgr: f64,
    pub giou: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(cls: f64, off: f64, rgr: f64, giou: f64, cfg: &ModelConfig) -> Self {
        LossBreakdown { cls, off, rgr, giou, total: cls + cfg.lambda_off * off + cfg.lambda_rgr * rgr + giou }
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.cls += s * other.cls;
        self.off += s * other.off;
        self.rgr += s * other.rgr;
        self.giou += s * other.giou;
        self.total += s * other.total;
    }
}

fn giou_cell_index(pred: &HeadOutput, target: &LocTarget, cfg: &ModelConfig) -> usize {
    match cfg.giou_cell {
        GiouCell::GroundTruth => target.cell(cfg.grid_w),
        GiouCell::Argmax => pred.argmax(),
    }
}

/// Direct evaluation of the four loss terms on plain maps.
pub fn loss_terms(pred: &HeadOutput, target: &LocTarget, cfg: &ModelConfig) -> LossBreakdown {
    let cls = -pred
        .score
        .iter()
        .zip(&target.indicator)
        .map(|(&t, &c)| c * t.max(LOG_EPS).ln() + (1.0 - c) * (1.0 - t).max(LOG_EPS).ln())
        .sum::<f64>();
    let k = target.cell(cfg.grid_w);
    let off = (target.dx - pred.tx[k]).powi(2) + (target.dy - pred.ty[k]).powi(2);
    let rgr = (target.size_w - pred.tw[k]).powi(2) + (target.size_h - pred.th[k]).powi(2);
    let truth = target_box(target, cfg);
    let pb = box_at(pred, giou_cell_index(pred, target, cfg), cfg);
    LossBreakdown::combine(cls, off, rgr, 1.0 - giou(&pb, &truth), cfg)
}

/// The ground-truth box a target was built from.
pub fn target_box(t: &LocTarget, cfg: &ModelConfig) -> BBox {
    BBox::new(
        (t.cell_x as f64 + t.dx) * cfg.stride_x(),
        (t.cell_y as f64 + t.dy) * cfg.stride_y(),
        t.size_w * cfg.image_w as f64,
        t.size_h * cfg.image_h as f64,
    )
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl HeadParams {
    pub fn register(store: &mut ParamStore, d: usize, cells: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        let w = store.add("head.w", &[d, 5], crate::init::xavier(rng, d, 5))?;
        // Score bias starts at the log-odds of a uniform one-of-`cells` prior.
        let prior = 1.0 / cells as f64;
        let mut b = vec![0.0; 5];
        b[0] = (prior / (1.0 - prior)).ln();
        let b = store.add("head.b", &[5], b)?;
        Ok(HeadParams { w, b })
    }
}

/// Per-cell linear map `d → 5` followed by a sigmoid; output `[cells × 5]`.
pub fn head_forward<'p>(g: &mut Graph<'p>, store: &'p ParamStore, p: &HeadParams, visual: Var) -> Result<Var> {
    let w = g.param(store, p.w);
    let b = g.param(store, p.b);
    let z = g.linear(visual, w, b)?;
    Ok(g.sigmoid(z))
}

/// Graph nodes of the four loss terms and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub cls: Var,
    pub off: Var,
    pub rgr: Var,
    pub giou: Var,
    pub total: Var,
}

impl LossNodes {
    pub fn values(&self, g: &Graph<'_>) -> LossBreakdown {
        LossBreakdown {
            cls: g.scalar(self.cls),
            off: g.scalar(self.off),
            rgr: g.scalar(self.rgr),
            giou: g.scalar(self.giou),
            total: g.scalar(self.total),
        }
    }
}

fn scalar(g: &mut Graph<'_>, v: f64) -> Result<Var> {
    Ok(g.constant(&[1], vec![v])?)
}

/// `1 − GIoU` between the box predicted at `cell` and a fixed ground truth.
pub fn giou_loss_graph(g: &mut Graph<'_>, head: Var, cell: usize, truth: &BBox, cfg: &ModelConfig) -> Result<Var> {
    let (x, y) = ((cell % cfg.grid_w) as f64, (cell / cfg.grid_w) as f64);
    let tx = g.gather(head, &[cell * 5 + 1])?;
    let ty = g.gather(head, &[cell * 5 + 2])?;
    let tw = g.gather(head, &[cell * 5 + 3])?;
    let th = g.gather(head, &[cell * 5 + 4])?;
    let (sx, sy) = (cfg.stride_x(), cfg.stride_y());
    let (iw, ih) = (cfg.image_w as f64, cfg.image_h as f64);
    // Predicted corners: center ± size/2.
    let cx = g.scale(tx, sx);
    let cx = g.offset(cx, x * sx);
    let cy = g.scale(ty, sy);
    let cy = g.offset(cy, y * sy);
    let half_w = g.scale(tw, iw / 2.0);
    let half_h = g.scale(th, ih / 2.0);
    let px1 = g.sub(cx, half_w)?;
    let px2 = g.add(cx, half_w)?;
    let py1 = g.sub(cy, half_h)?;
    let py2 = g.add(cy, half_h)?;
    let (gx1, gx2, gy1, gy2) =
        (scalar(g, truth.x1())?, scalar(g, truth.x2())?, scalar(g, truth.y1())?, scalar(g, truth.y2())?);
    let zero = scalar(g, 0.0)?;

    let ix2 = g.minimum(px2, gx2)?;
    let ix1 = g.maximum(px1, gx1)?;
    let iw_ = g.sub(ix2, ix1)?;
    let iw_ = g.maximum(iw_, zero)?;
    let iy2 = g.minimum(py2, gy2)?;
    let iy1 = g.maximum(py1, gy1)?;
    let ih_ = g.sub(iy2, iy1)?;
    let ih_ = g.maximum(ih_, zero)?;
    let inter = g.mul(iw_, ih_)?;

    let pw = g.sub(px2, px1)?;
    let ph = g.sub(py2, py1)?;
    let parea = g.mul(pw, ph)?;
    let sum_area = g.offset(parea, truth.area());
    let union = g.sub(sum_area, inter)?;

    let hx2 = g.maximum(px2, gx2)?;
    let hx1 = g.minimum(px1, gx1)?;
    let hw = g.sub(hx2, hx1)?;
    let hy2 = g.maximum(py2, gy2)?;
    let hy1 = g.minimum(py1, gy1)?;
    let hh = g.sub(hy2, hy1)?;
    let hull = g.mul(hw, hh)?;

    let iou = g.div(inter, union)?;
    let gap = g.sub(hull, union)?;
    let gap = g.div(gap, hull)?;
    let giou = g.sub(iou, gap)?;
    Ok(g.one_minus(giou))
}

/// Loss terms as graph nodes on a `[cells × 5]` head activation.
pub fn loss_graph(g: &mut Graph<'_>, head: Var, target: &LocTarget, cfg: &ModelConfig) -> Result<LossNodes> {
    let n = cfg.cells();
    let score_idx: Vec<usize> = (0..n).map(|i| i * 5).collect();
    let score = g.gather(head, &score_idx)?;
    let pos = g.constant(&[n], target.indicator.clone())?;
    let neg = g.constant(&[n], target.indicator.iter().map(|c| 1.0 - c).collect())?;
    let ln_t = g.ln_clamped(score, LOG_EPS);
    let one_minus = g.one_minus(score);
    let ln_1mt = g.ln_clamped(one_minus, LOG_EPS);
    let a = g.mul(pos, ln_t)?;
    let b = g.mul(neg, ln_1mt)?;
    let ab = g.add(a, b)?;
    let s = g.sum(ab);
    let cls = g.scale(s, -1.0);

    let k = target.cell(cfg.grid_w);
    let pred = g.gather(head, &[k * 5 + 1, k * 5 + 2, k * 5 + 3, k * 5 + 4])?;
    let want_off = g.constant(&[2], vec![target.dx, target.dy])?;
    let want_size = g.constant(&[2], vec![target.size_w, target.size_h])?;
    let off_pred = g.gather(pred, &[0, 1])?;
    let size_pred = g.gather(pred, &[2, 3])?;
    let e = g.sub(want_off, off_pred)?;
    let e = g.square(e);
    let off = g.sum(e);
    let e = g.sub(want_size, size_pred)?;
    let e = g.square(e);
    let rgr = g.sum(e);

    let cell = match cfg.giou_cell {
        GiouCell::GroundTruth => k,
        GiouCell::Argmax => HeadOutput::from_rows(g.value(head), cfg.grid_w, cfg.grid_h).argmax(),
    };
    let giou = giou_loss_graph(g, head, cell, &target_box(target, cfg), cfg)?;

    let w_off = g.scale(off, cfg.lambda_off);
    let w_rgr = g.scale(rgr, cfg.lambda_rgr);
    let t = g.add(cls, w_off)?;
    let t = g.add(t, w_rgr)?;
    let total = g.add(t, giou)?;
    Ok(LossNodes { cls, off, rgr, giou, total })
}
