//! Synthetic videos of moving, occluding shapes with full annotations.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::BBox;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disc, ShapeKind::Square, ShapeKind::Triangle];

    pub fn class_id(self) -> usize {
        self as usize
    }

    /// Whether the pixel center `(px, py)` lies inside the shape of extent
    /// `size` centered at `(cx, cy)`.
    fn contains(self, cx: f64, cy: f64, size: f64, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - cx, py - cy);
        match self {
            ShapeKind::Disc => dx * dx + dy * dy <= size * size,
            ShapeKind::Square => dx.abs() <= size && dy.abs() <= size,
            // apex up, base at +size
            ShapeKind::Triangle => dy >= -size && dy <= size && dx.abs() <= (dy + size) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Center at frame 0, in pixels.
    pub center: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Radius, half side or half height.
    pub size: f64,
    /// RGB fill in [0, 1].
    pub color: [f64; 3],
    /// Half-open frame intervals during which the shape is absent.
    pub hidden: Vec<(usize, usize)>,
}

impl ShapeSpec {
    fn hidden_at(&self, frame: usize) -> bool {
        self.hidden.iter().any(|&(a, b)| frame >= a && frame < b)
    }
}

/// Shapes are drawn in list order, later ones on top.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub shapes: Vec<ShapeSpec>,
    pub background: [f64; 3],
    /// Uniform per-pixel noise amplitude.
    pub noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.frames == 0 {
            return Err(Error::InvalidScene("canvas must be at least 4×4 with one frame".into()));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.size.is_nan() || s.size <= 0.0 {
                return Err(Error::InvalidScene(alloc::format!("shape {i} has zero area")));
            }
            if 2.0 * s.size + 2.0 >= self.height.min(self.width) as f64 {
                return Err(Error::InvalidScene(alloc::format!("shape {i} does not fit the canvas")));
            }
            if s.color.iter().chain(&self.background).any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidScene(alloc::format!("shape {i} color outside [0, 1]")));
            }
            if !(s.center.0.is_finite() && s.center.1.is_finite() && s.velocity.0.is_finite() && s.velocity.1.is_finite()) {
                return Err(Error::InvalidScene(alloc::format!("shape {i} has non-finite motion")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub class_id: usize,
    /// Tight box `[x1, y1, x2, y2)` in pixels.
    pub bbox: BBox,
    /// Row-major `H × W`.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Interleaved RGB bytes, `H × W × 3`.
    pub rgb: Vec<u8>,
    pub instances: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Frame>,
}

impl Video {
    /// `[3, H, W]` intensities in [0, 1].
    pub fn image(&self, frame: usize) -> Tensor {
        let hw = self.height * self.width;
        let rgb = &self.frames[frame].rgb;
        let mut data = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                data[c * hw + p] = rgb[3 * p + c] as f64 / 255.0;
            }
        }
        Tensor::new(vec![3, self.height, self.width], data).unwrap()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoDataset {
    pub videos: Vec<Video>,
}

/// Position of a shape after `frame` steps, reflecting off the walls so
/// the shape stays at least one pixel inside the canvas.
fn position(spec: &ShapeSpec, frame: usize, width: usize, height: usize) -> (f64, f64) {
    let axis = |c: f64, v: f64, extent: usize| {
        let lo = spec.size + 1.0;
        let hi = extent as f64 - 1.0 - spec.size;
        let span = hi - lo;
        if span <= 0.0 {
            return (lo + hi) / 2.0;
        }
        let p = libm::fmod(c.clamp(lo, hi) - lo + v * frame as f64, 2.0 * span);
        let p = if p < 0.0 { p + 2.0 * span } else { p };
        lo + if p > span { 2.0 * span - p } else { p }
    };
    (axis(spec.center.0, spec.velocity.0, width), axis(spec.center.1, spec.velocity.1, height))
}

fn to_byte(v: f64) -> u8 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) as u8
}

pub fn generate_video(spec: &SceneSpec) -> Result<Video> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut rgb = vec![0u8; h * w * 3];
        for px in rgb.chunks_mut(3) {
            for (c, v) in px.iter_mut().enumerate() {
                let n = if spec.noise > 0.0 { rng.random_range(-spec.noise..=spec.noise) } else { 0.0 };
                *v = to_byte(spec.background[c] + n);
            }
        }
        // owner[p] = index of the topmost visible shape covering pixel p
        let mut owner: Vec<Option<usize>> = vec![None; h * w];
        for (i, s) in spec.shapes.iter().enumerate() {
            if s.hidden_at(t) {
                continue;
            }
            let (cx, cy) = position(s, t, w, h);
            for y in 0..h {
                for x in 0..w {
                    if s.kind.contains(cx, cy, s.size, x as f64 + 0.5, y as f64 + 0.5) {
                        owner[y * w + x] = Some(i);
                    }
                }
            }
        }
        for (p, o) in owner.iter().enumerate() {
            if let Some(i) = *o {
                for c in 0..3 {
                    rgb[3 * p + c] = to_byte(spec.shapes[i].color[c]);
                }
            }
        }
        let mut instances = Vec::new();
        for (i, s) in spec.shapes.iter().enumerate() {
            let mask: Vec<bool> = owner.iter().map(|&o| o == Some(i)).collect();
            if let Some(bbox) = tight_box(&mask, w) {
                instances.push(Annotation { id: i as u64 + 1, class_id: s.kind.class_id(), bbox, mask });
            }
        }
        frames.push(Frame { rgb, instances });
    }
    Ok(Video { height: h, width: w, frames })
}

/// Tight `[x1, y1, x2, y2)` box of a nonempty mask.
pub fn tight_box(mask: &[bool], width: usize) -> Option<BBox> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (p % width, p / width);
        b = Some(match b {
            None => (x, y, x, y),
            Some((x1, y1, x2, y2)) => (x1.min(x), y1.min(y), x2.max(x), y2.max(y)),
        });
    }
    b.map(|(x1, y1, x2, y2)| BBox::new(x1 as f64, y1 as f64, (x2 + 1) as f64, (y2 + 1) as f64))
}

const MAX_REDRAWS: usize = 100;

/// Whether the bounding squares of `a` and `b` stay `gap` apart on at least
/// one axis in every frame.
fn apart(a: &ShapeSpec, b: &ShapeSpec, frames: usize, gap: f64, cfg: &SynthConfig) -> bool {
    (0..frames).all(|t| {
        let (pa, pb) = (position(a, t, cfg.width, cfg.height), position(b, t, cfg.width, cfg.height));
        let reach = a.size + b.size + gap;
        (pa.0 - pb.0).abs() > reach || (pa.1 - pb.1).abs() > reach
    })
}

/// Ranges for random scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Uses the first `classes` shape kinds.
    pub classes: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub max_speed: f64,
    /// Chance that a shape gets one hidden interval.
    pub occlusion_prob: f64,
    pub max_hidden: usize,
    pub noise: f64,
    /// When set, shapes whose bounding squares come closer than this in any
    /// frame are redrawn, so instances never touch.
    pub min_gap: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_frames: 8,
            max_frames: 16,
            min_shapes: 2,
            max_shapes: 4,
            classes: 3,
            min_size: 5.0,
            max_size: 10.0,
            max_speed: 2.0,
            occlusion_prob: 0.2,
            max_hidden: 3,
            noise: 0.05,
            min_gap: None,
        }
    }
}

impl SynthConfig {
    /// Large shapes of two classes that never occlude each other.
    pub fn easy() -> Self {
        Self {
            min_frames: 8,
            max_frames: 8,
            min_shapes: 1,
            max_shapes: 3,
            classes: 2,
            min_size: 9.0,
            max_size: 12.0,
            max_speed: 1.5,
            occlusion_prob: 0.0,
            noise: 0.02,
            min_gap: Some(4.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScene(m.into()));
        if self.classes == 0 || self.classes > ShapeKind::ALL.len() {
            return bad("classes must be 1 to 3");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range is empty");
        }
        if self.min_shapes > self.max_shapes {
            return bad("shape range is empty");
        }
        if self.min_size.is_nan() || self.min_size <= 0.0 || self.min_size > self.max_size {
            return bad("size range is empty");
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) || self.max_speed < 0.0 || self.noise < 0.0 {
            return bad("probabilities and speeds must be non-negative");
        }
        if self.min_gap.is_some_and(|g| g.is_nan() || g < 0.0) {
            return bad("min_gap must be non-negative");
        }
        Ok(())
    }

    pub fn random_scene(&self, rng: &mut impl Rng) -> SceneSpec {
        let frames = rng.random_range(self.min_frames..=self.max_frames);
        let count = rng.random_range(self.min_shapes..=self.max_shapes);
        let background = [rng.random_range(0.0..0.25), rng.random_range(0.0..0.25), rng.random_range(0.0..0.25)];
        let mut shapes: Vec<ShapeSpec> = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..MAX_REDRAWS {
                let size = rng.random_range(self.min_size..=self.max_size);
                let kind = ShapeKind::ALL[rng.random_range(0..self.classes)];
                let center = (
                    rng.random_range(size + 1.0..self.width as f64 - 1.0 - size),
                    rng.random_range(size + 1.0..self.height as f64 - 1.0 - size),
                );
                let speed = if self.max_speed > 0.0 { rng.random_range(0.0..=self.max_speed) } else { 0.0 };
                let angle = rng.random_range(0.0..core::f64::consts::TAU);
                let velocity = (speed * libm::cos(angle), speed * libm::sin(angle));
                let color = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
                let mut hidden = Vec::new();
                if frames > 2 && rng.random_bool(self.occlusion_prob) {
                    let len = rng.random_range(1..=self.max_hidden.max(1).min(frames - 2));
                    let start = rng.random_range(1..frames - len);
                    hidden.push((start, start + len));
                }
                let shape = ShapeSpec { kind, center, velocity, size, color, hidden };
                if self.min_gap.is_none_or(|gap| shapes.iter().all(|o| apart(&shape, o, frames, gap, self))) {
                    shapes.push(shape);
                    break;
                }
            }
        }
        SceneSpec { height: self.height, width: self.width, frames, shapes, background, noise: self.noise, seed: rng.random() }
    }
}

pub fn generate_dataset(config: &SynthConfig, videos: usize, seed: u64) -> Result<VideoDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let videos = (0..videos).map(|_| generate_video(&config.random_scene(&mut rng))).collect::<Result<_>>()?;
    Ok(VideoDataset { videos })
}
