//! Random multi-object scenes rendered as solid shapes on a gray background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PfosError, Result};
use crate::image::Image;
use crate::localization::{iou, BBox};

/// Background value, exactly representable in 8-bit storage.
pub const BACKGROUND: u8 = 128;
pub const SMALL_SIZES: (usize, usize) = (8, 13);
pub const LARGE_SIZES: (usize, usize) = (17, 24);
/// Objects overlap less than this (IoU).
pub const MAX_PAIR_IOU: f64 = 0.1;
const PLACEMENT_RETRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
}

impl Color {
    pub const ALL: [Color; 5] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Purple];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
        }
    }

    pub fn rgb8(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 180, 60],
            Color::Blue => [40, 80, 220],
            Color::Yellow => [230, 210, 40],
            Color::Purple => [150, 60, 190],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SizeClass {
    Small,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 2] = [SizeClass::Small, SizeClass::Large];

    pub fn word(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Large => "large",
        }
    }

    /// Inclusive side-length range in pixels.
    pub fn range(self) -> (usize, usize) {
        match self {
            SizeClass::Small => SMALL_SIZES,
            SizeClass::Large => LARGE_SIZES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneObject {
    pub kind: ShapeKind,
    pub color: Color,
    pub size: SizeClass,
    /// Tight box; corners lie on integer pixel boundaries.
    pub bbox: BBox,
    /// Later objects are painted over earlier ones.
    pub draw_order: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneSpec {
    pub min_objects: usize,
    pub max_objects: usize,
    pub width: usize,
    pub height: usize,
}

impl SceneSpec {
    pub fn desk() -> Self {
        SceneSpec { min_objects: 3, max_objects: 5, width: 64, height: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_objects < 2 || self.max_objects > 6 || self.min_objects > self.max_objects {
            return Err(PfosError::Validation(format!(
                "object count range {}..={} must lie within 2..=6",
                self.min_objects, self.max_objects
            )));
        }
        if self.width < LARGE_SIZES.1 || self.height < LARGE_SIZES.1 {
            return Err(PfosError::Validation(format!("image {}x{} too small for objects", self.width, self.height)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub image: Image,
    pub objects: Vec<SceneObject>,
}

/// Whether pixel `(px, py)` (sampled at its center) is covered by the shape.
pub fn covers(obj: &SceneObject, px: usize, py: usize) -> bool {
    let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
    let b = &obj.bbox;
    if x < b.x1() || x >= b.x2() || y < b.y1() || y >= b.y2() {
        return false;
    }
    match obj.kind {
        ShapeKind::Square => true,
        ShapeKind::Circle => {
            let r = b.w / 2.0;
            (x - b.cx).powi(2) + (y - b.cy).powi(2) <= r * r
        }
        ShapeKind::Triangle => {
            // Apex at top-center, base along the bottom edge.
            let t = (y - b.y1()) / b.h;
            (x - b.cx).abs() <= t * b.w / 2.0
        }
    }
}

pub fn render(objects: &[SceneObject], width: usize, height: usize) -> Image {
    let bg = BACKGROUND as f64 / 255.0;
    let mut img = Image::filled(width, height, [bg; 3]);
    let mut order: Vec<&SceneObject> = objects.iter().collect();
    order.sort_by_key(|o| o.draw_order);
    for obj in order {
        let rgb = obj.color.rgb8().map(|c| c as f64 / 255.0);
        let (x0, y0) = (obj.bbox.x1().max(0.0) as usize, obj.bbox.y1().max(0.0) as usize);
        let (x1, y1) = ((obj.bbox.x2().ceil() as usize).min(width), (obj.bbox.y2().ceil() as usize).min(height));
        for py in y0..y1 {
            for px in x0..x1 {
                if covers(obj, px, py) {
                    img.set_pixel(px, py, rgb);
                }
            }
        }
    }
    img
}

fn pick<T: Copy>(rng: &mut impl Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Deterministic scene for `seed`. Fails when an object cannot be placed
/// within the retry budget; the caller picks another seed.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for draw_order in 0..n {
        let kind = pick(&mut rng, &ShapeKind::ALL);
        let color = pick(&mut rng, &Color::ALL);
        let size = pick(&mut rng, &SizeClass::ALL);
        let (lo, hi) = size.range();
        let side = rng.random_range(lo..=hi);
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let x = rng.random_range(0..=spec.width - side) as f64;
            let y = rng.random_range(0..=spec.height - side) as f64;
            let bbox = BBox::from_corners(x, y, x + side as f64, y + side as f64);
            if objects.iter().all(|o| iou(&o.bbox, &bbox) < MAX_PAIR_IOU) {
                placed = Some(bbox);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| {
            PfosError::Generation(format!("seed {seed}: no room for object {} of {n}", draw_order + 1))
        })?;
        objects.push(SceneObject { kind, color, size, bbox, draw_order });
    }
    let image = render(&objects, spec.width, spec.height);
    Ok(Scene { seed, image, objects })
}
