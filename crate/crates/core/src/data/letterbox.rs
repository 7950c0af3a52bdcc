//! Aspect-preserving resize onto a square canvas.

use crate::image::Image;
use crate::localization::BBox;

/// Forward map: `x' = x·scale + pad_x`, `y' = y·scale + pad_y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
}

impl LetterboxTransform {
    pub fn apply(&self, b: &BBox) -> BBox {
        BBox::new(b.cx * self.scale + self.pad_x, b.cy * self.scale + self.pad_y, b.w * self.scale, b.h * self.scale)
    }

    pub fn invert(&self, b: &BBox) -> BBox {
        BBox::new((b.cx - self.pad_x) / self.scale, (b.cy - self.pad_y) / self.scale, b.w / self.scale, b.h / self.scale)
    }
}

/// Bilinear sample at continuous pixel-center coordinates, edges clamped.
fn sample(img: &Image, x: f64, y: f64) -> [f64; 3] {
    let fx = (x - 0.5).clamp(0.0, (img.width - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let mut out = [0.0; 3];
    let (p00, p10, p01, p11) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
    for c in 0..3 {
        let top = p00[c] * (1.0 - ax) + p10[c] * ax;
        let bottom = p01[c] * (1.0 - ax) + p11[c] * ax;
        out[c] = top * (1.0 - ay) + bottom * ay;
    }
    out
}

/// Scales the long edge to `target` and centers the result on a
/// `target × target` canvas filled with `fill`.
pub fn letterbox(img: &Image, target: usize, fill: [f64; 3]) -> (Image, LetterboxTransform) {
    let scale = target as f64 / img.width.max(img.height) as f64;
    let nw = ((img.width as f64 * scale).round() as usize).clamp(1, target);
    let nh = ((img.height as f64 * scale).round() as usize).clamp(1, target);
    let (ox, oy) = ((target - nw) / 2, (target - nh) / 2);
    let mut out = Image::filled(target, target, fill);
    for y in 0..nh {
        for x in 0..nw {
            let sx = (x as f64 + 0.5) / scale;
            let sy = (y as f64 + 0.5) / scale;
            out.set_pixel(x + ox, y + oy, sample(img, sx, sy));
        }
    }
    (out, LetterboxTransform { scale, pad_x: ox as f64, pad_y: oy as f64 })
}
