use serde::{Deserialize, Serialize};

use crate::constraints::{Category, Color};

/// Side length of the square simulated canvas. `y` grows downward.
pub const CANVAS: f64 = 1000.0;

/// Axis-aligned box: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Box of size `w × h` centered on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= width
            && self.y + self.h <= height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: Category,
    pub color: Color,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Structured stand-in for a generated image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
    pub provenance_seed: u64,
}

impl SceneGraph {
    pub fn is_valid(&self) -> bool {
        self.objects
            .iter()
            .all(|o| o.bbox.within(CANVAS, CANVAS) && (0.0..=1.0).contains(&o.confidence))
    }
}
