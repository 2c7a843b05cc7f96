//! Axis-aligned boxes and points in continuous image/feature coordinates.
//!
//! Pixel `(col, row)` covers `[col, col+1) × [row, row+1)`; its center is
//! at `(col + 0.5, row + 0.5)`.

/// Box as `(x1, y1, x2, y2)` with `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    pub fn clamped(&self, w: f64, h: f64) -> Self {
        Self::new(
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
            self.x2.clamp(0.0, w),
            self.y2.clamp(0.0, h),
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Integer grid cell containing continuous point `(x, y)`, clamped into a
/// `w × h` grid.
pub fn cell_of(x: f64, y: f64, w: usize, h: usize) -> (usize, usize) {
    let cx = crate::math::floor(x).clamp(0.0, (w - 1) as f64) as usize;
    let cy = crate::math::floor(y).clamp(0.0, (h - 1) as f64) as usize;
    (cx, cy)
}
