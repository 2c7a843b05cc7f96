//! Center-point detection over a feature map: heatmap, box size and
//! sub-cell offset heads, their training targets and loss, and peak
//! decoding into detections.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::Var;
use crate::geometry::{cell_of, BBox};
use crate::math;
use crate::nn::ConvHead;
use crate::params::{Ctx, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const FOCAL_ALPHA: f64 = 2.0;
pub const FOCAL_BETA: f64 = 4.0;
/// Minimum IoU a box must keep under center jitter; sizes the gaussian.
pub const GAUSSIAN_MIN_OVERLAP: f64 = 0.7;
/// Initial heatmap logit bias, `-ln((1 - 0.1) / 0.1)`.
pub const HEAT_PRIOR_BIAS: f64 = -2.19;

/// Plain-value detection maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DetMaps {
    /// `[C, H, W]` probabilities.
    pub heat: Tensor,
    /// `[2, H, W]` box width and height in feature cells.
    pub size: Tensor,
    /// `[2, H, W]` sub-cell `(dx, dy)` of the center.
    pub offset: Tensor,
}

/// Detection maps as recorded values.
#[derive(Debug, Clone, Copy)]
pub struct DetVars {
    pub heat: Var,
    pub size: Var,
    pub offset: Var,
}

impl DetVars {
    pub fn values(&self, ctx: &Ctx) -> DetMaps {
        DetMaps {
            heat: ctx.tape.value(self.heat).clone(),
            size: ctx.tape.value(self.size).clone(),
            offset: ctx.tape.value(self.offset).clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    /// Refined center in feature coordinates.
    pub center: (f64, f64),
    pub bbox: BBox,
}

impl Detection {
    pub fn cell(&self, width: usize, height: usize) -> (usize, usize) {
        cell_of(self.center.0, self.center.1, width, height)
    }
}

/// A ground-truth object in feature coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub class_id: usize,
    pub center: (f64, f64),
    pub size: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct DetectHead {
    pub heat: ConvHead,
    pub size: ConvHead,
    pub offset: ConvHead,
    pub classes: usize,
}

impl DetectHead {
    pub fn new(store: &mut ParamStore, dim: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let heat = ConvHead::new(store, "det.heat", dim, classes, rng);
        store.get_mut(heat.out.bias).data_mut().fill(HEAT_PRIOR_BIAS);
        Self {
            heat,
            size: ConvHead::new(store, "det.size", dim, 2, rng),
            offset: ConvHead::new(store, "det.offset", dim, 2, rng),
            classes,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, features: Var) -> Result<DetVars> {
        let logits = self.heat.forward(ctx, features)?;
        let heat = ctx.tape.sigmoid(logits);
        let size = self.size.forward(ctx, features)?;
        let offset = self.offset.forward(ctx, features)?;
        Ok(DetVars { heat, size, offset })
    }
}

/// Radius of the splatted gaussian for a `w × h` box.
pub fn gaussian_radius(w: f64, h: f64, min_overlap: f64) -> f64 {
    let b1 = h + w;
    let c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + math::sqrt(b1 * b1 - 4.0 * c1)) / 2.0;
    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - min_overlap) * w * h;
    let r2 = (b2 + math::sqrt(b2 * b2 - 16.0 * c2)) / 2.0;
    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (h + w);
    let c3 = (min_overlap - 1.0) * w * h;
    let r3 = (b3 + math::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
    r1.min(r2).min(r3)
}

/// Training targets for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetTargets {
    /// `[C, H, W]`, exactly 1 at each object's center cell.
    pub heat: Vec<f64>,
    /// Center cells `(x, y)` in object order.
    pub cells: Vec<(usize, usize)>,
    pub sizes: Vec<(f64, f64)>,
    pub offsets: Vec<(f64, f64)>,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl DetTargets {
    pub fn encode(objects: &[GtObject], classes: usize, height: usize, width: usize) -> Self {
        let mut heat = vec![0.0; classes * height * width];
        let mut cells = Vec::new();
        let mut sizes = Vec::new();
        let mut offsets = Vec::new();
        for obj in objects {
            let (cx, cy) = cell_of(obj.center.0, obj.center.1, width, height);
            let radius = gaussian_radius(obj.size.0, obj.size.1, GAUSSIAN_MIN_OVERLAP).max(0.0) as i64;
            splat_gaussian(&mut heat[obj.class_id * height * width..(obj.class_id + 1) * height * width], width, height, cx, cy, radius);
            cells.push((cx, cy));
            sizes.push(obj.size);
            offsets.push((obj.center.0 - cx as f64, obj.center.1 - cy as f64));
        }
        Self {
            heat,
            cells,
            sizes,
            offsets,
            classes,
            height,
            width,
        }
    }

    /// Maps that a perfect detector would output for these targets.
    pub fn to_maps(&self) -> DetMaps {
        let hw = self.height * self.width;
        let mut size = vec![0.0; 2 * hw];
        let mut offset = vec![0.0; 2 * hw];
        for (i, &(x, y)) in self.cells.iter().enumerate() {
            let p = y * self.width + x;
            size[p] = self.sizes[i].0;
            size[hw + p] = self.sizes[i].1;
            offset[p] = self.offsets[i].0;
            offset[hw + p] = self.offsets[i].1;
        }
        let shape = |c| vec![c, self.height, self.width];
        DetMaps {
            heat: Tensor::new(shape(self.classes), self.heat.clone()).unwrap(),
            size: Tensor::new(shape(2), size).unwrap(),
            offset: Tensor::new(shape(2), offset).unwrap(),
        }
    }
}

fn splat_gaussian(plane: &mut [f64], width: usize, height: usize, cx: usize, cy: usize, radius: i64) {
    let sigma = (2 * radius + 1) as f64 / 6.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (x, y) = (cx as i64 + dx, cy as i64 + dy);
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                continue;
            }
            let g = if dx == 0 && dy == 0 {
                1.0
            } else {
                math::exp(-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma))
            };
            let v = &mut plane[y as usize * width + x as usize];
            *v = v.max(g);
        }
    }
}

/// Loss components of the detection branch.
#[derive(Debug, Clone, Copy)]
pub struct DetLoss {
    pub total: Var,
    pub center: Var,
    pub size: Var,
    pub offset: Var,
}

/// Focal loss on the heatmap plus L1 size and offset terms at the object
/// center cells, each L1 term divided by the object count.
pub fn detect_loss(ctx: &mut Ctx, maps: &DetVars, targets: &DetTargets, lambda_size: f64, lambda_offset: f64) -> Result<DetLoss> {
    let hw = targets.height * targets.width;
    if ctx.tape.shape(maps.heat) != [targets.classes, targets.height, targets.width] {
        return Err(Error::ShapeMismatch {
            op: "detect_loss",
            left: ctx.tape.shape(maps.heat).to_vec(),
            right: vec![targets.classes, targets.height, targets.width],
        });
    }
    let center = ctx.tape.focal_loss(maps.heat, targets.heat.clone(), FOCAL_ALPHA, FOCAL_BETA)?;
    let n = targets.cells.len();
    let (size, offset) = if n == 0 {
        let z = ctx.tape.constant(Tensor::scalar(0.0));
        (z, z)
    } else {
        let mut index = Vec::with_capacity(2 * n);
        for ch in 0..2 {
            index.extend(targets.cells.iter().map(|&(x, y)| ch * hw + y * targets.width + x));
        }
        let l1 = |ctx: &mut Ctx, map: Var, want: Vec<f64>| -> Result<Var> {
            let picked = ctx.tape.gather(map, &index, &[2 * n])?;
            let want = ctx.tape.constant(Tensor::from_vec(want));
            let d = ctx.tape.sub(picked, want)?;
            let a = ctx.tape.abs(d);
            let s = ctx.tape.sum(a);
            Ok(ctx.tape.scale(s, 1.0 / n as f64))
        };
        let split = |v: &[(f64, f64)]| v.iter().map(|p| p.0).chain(v.iter().map(|p| p.1)).collect::<Vec<_>>();
        let size = l1(ctx, maps.size, split(&targets.sizes))?;
        let offset = l1(ctx, maps.offset, split(&targets.offsets))?;
        (size, offset)
    };
    let ws = ctx.tape.scale(size, lambda_size);
    let wo = ctx.tape.scale(offset, lambda_offset);
    let t = ctx.tape.add(center, ws)?;
    let total = ctx.tape.add(t, wo)?;
    Ok(DetLoss {
        total,
        center,
        size,
        offset,
    })
}

/// Minimum box side kept by decoding, in feature cells.
const MIN_SIZE: f64 = 1e-3;

/// 3×3 local maxima of the heatmap, best `top_k` by score, kept when
/// `score ≥ threshold`.
pub fn decode_detections(maps: &DetMaps, top_k: usize, threshold: f64) -> Vec<Detection> {
    let [classes, h, w] = *maps.heat.shape() else {
        return Vec::new();
    };
    let hw = h * w;
    let heat = maps.heat.data();
    let mut peaks = Vec::new();
    for c in 0..classes {
        let plane = &heat[c * hw..(c + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if v < threshold {
                    continue;
                }
                let mut is_peak = true;
                'n: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if plane[ny * w + nx] > v {
                            is_peak = false;
                            break 'n;
                        }
                    }
                }
                if is_peak {
                    peaks.push((v, c, y, x));
                }
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    peaks.truncate(top_k);
    let size = maps.size.data();
    let off = maps.offset.data();
    peaks
        .into_iter()
        .map(|(score, class_id, y, x)| {
            let p = y * w + x;
            let cx = (x as f64 + off[p]).clamp(0.0, w as f64);
            let cy = (y as f64 + off[hw + p]).clamp(0.0, h as f64);
            let bw = size[p].max(MIN_SIZE);
            let bh = size[hw + p].max(MIN_SIZE);
            Detection {
                class_id,
                score,
                center: (cx, cy),
                bbox: BBox::from_center(cx, cy, bw, bh).clamped(w as f64, h as f64),
            }
        })
        .collect()
}
