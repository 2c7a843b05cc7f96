//! `key = value` configuration with `--key value` overrides.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so
//! an empty file is a complete configuration. Values are range checked
//! as they are set, and errors carry the offending line number (overrides
//! are reported as line 0).

use std::path::{Path, PathBuf};

use stgvis_core::optim::Optimizer;
use stgvis_core::pipeline::{InferConfig, LossWeights, ModelConfig};
use stgvis_core::synth::SynthConfig;

use crate::error::{read, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Easy,
    Standard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub dim: usize,
    pub iterations: usize,
    pub window: usize,
    pub backbone_width: usize,
    pub classes: usize,
    pub det_threshold: f64,
    pub assoc_threshold: f64,
    pub delta_t: usize,
    pub top_k: usize,
    pub lambda_det: f64,
    pub lambda_mask: f64,
    pub lambda_edge: f64,
    pub lambda_size: f64,
    pub lambda_offset: f64,
    pub lambda_reference: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub clip_norm: f64,
    pub steps: usize,
    pub seed: u64,
    pub preset: Preset,
    pub videos: usize,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
    pub render_dir: PathBuf,
    /// Edge-list JSON written by `infer` when non-empty.
    pub graph_dump: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let m = ModelConfig::default();
        let i = InferConfig::default();
        let w = LossWeights::default();
        Self {
            dim: m.dim,
            iterations: m.iterations,
            window: m.window,
            backbone_width: m.backbone_width,
            classes: m.classes,
            det_threshold: i.det_threshold,
            assoc_threshold: i.assoc_threshold,
            delta_t: i.delta_t,
            top_k: i.top_k,
            lambda_det: w.det,
            lambda_mask: w.mask,
            lambda_edge: w.edge,
            lambda_size: w.size,
            lambda_offset: w.offset,
            lambda_reference: w.reference_det,
            optimizer: OptimizerKind::Sgd,
            lr: 1e-2,
            momentum: 0.9,
            milestones: Vec::new(),
            clip_norm: 10.0,
            steps: 1000,
            seed: 0,
            preset: Preset::Easy,
            videos: 32,
            dataset: "data".into(),
            checkpoint: "model.ckpt".into(),
            log: "train_log.csv".into(),
            predictions: "predictions.json".into(),
            report: "report.json".into(),
            render_dir: "render".into(),
            graph_dump: PathBuf::new(),
        }
    }
}

pub const KEYS: &[(&str, &str)] = &[
    ("D", "feature channels"),
    ("L", "message-passing iterations"),
    ("w", "graph window in feature cells (odd)"),
    ("backbone_width", "first backbone stage channels"),
    ("classes", "number of object classes"),
    ("tau_det", "detection score threshold, in [0, 1]"),
    ("tau_assoc", "association score threshold, in [0, 1]"),
    ("delta_t", "frames an unmatched identity is remembered"),
    ("top_k", "detections kept per frame"),
    ("lambda1", "detection loss weight"),
    ("lambda2", "mask loss weight"),
    ("lambda3", "edge loss weight"),
    ("lambda_size", "box size loss weight"),
    ("lambda_offset", "center offset loss weight"),
    ("lambda_ref", "reference-frame detection loss weight"),
    ("optimizer", "sgd or adam"),
    ("lr", "base learning rate"),
    ("momentum", "sgd momentum, in [0, 1)"),
    ("milestones", "comma-separated steps where lr drops tenfold"),
    ("clip_norm", "gradient norm clip, 0 disables"),
    ("steps", "training steps"),
    ("seed", "random seed"),
    ("preset", "synthetic data preset: easy or standard"),
    ("videos", "videos generated by gen-data"),
    ("dataset", "dataset directory"),
    ("checkpoint", "checkpoint path"),
    ("log", "training log CSV path"),
    ("predictions", "predictions JSON path"),
    ("report", "evaluation report JSON path"),
    ("render_dir", "overlay output directory"),
    ("graph_dump", "edge-list JSON written by infer, empty disables"),
];

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn positive(v: &str) -> std::result::Result<usize, String> {
    match num::<usize>(v)? {
        0 => Err("must be positive".into()),
        n => Ok(n),
    }
}

fn unit(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} is outside [0, 1]"))
    }
}

fn weight(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("{x} must be finite and non-negative"))
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "D" => self.dim = positive(v)?,
            "L" => self.iterations = positive(v)?,
            "w" => {
                let w = positive(v)?;
                if w % 2 == 0 {
                    return Err("window must be odd".into());
                }
                self.window = w;
            }
            "backbone_width" => self.backbone_width = positive(v)?,
            "classes" => self.classes = positive(v)?,
            "tau_det" => self.det_threshold = unit(v)?,
            "tau_assoc" => self.assoc_threshold = unit(v)?,
            "delta_t" => self.delta_t = num(v).map_err(|_| format!("delta_t must be a non-negative integer, got {v:?}"))?,
            "top_k" => self.top_k = positive(v)?,
            "lambda1" => self.lambda_det = weight(v)?,
            "lambda2" => self.lambda_mask = weight(v)?,
            "lambda3" => self.lambda_edge = weight(v)?,
            "lambda_size" => self.lambda_size = weight(v)?,
            "lambda_offset" => self.lambda_offset = weight(v)?,
            "lambda_ref" => self.lambda_reference = weight(v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(format!("unknown optimizer {v:?}")),
                }
            }
            "lr" => {
                let lr = weight(v)?;
                if lr == 0.0 {
                    return Err("lr must be positive".into());
                }
                self.lr = lr;
            }
            "momentum" => {
                let m = unit(v)?;
                if m >= 1.0 {
                    return Err("momentum must be below 1".into());
                }
                self.momentum = m;
            }
            "milestones" => {
                self.milestones = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(num::<usize>)
                    .collect::<std::result::Result<_, _>>()?;
                if self.milestones.windows(2).any(|p| p[0] >= p[1]) {
                    return Err("milestones must be strictly increasing".into());
                }
            }
            "clip_norm" => self.clip_norm = weight(v)?,
            "steps" => self.steps = num(v)?,
            "seed" => self.seed = num(v)?,
            "preset" => {
                self.preset = match v {
                    "easy" => Preset::Easy,
                    "standard" => Preset::Standard,
                    _ => return Err(format!("unknown preset {v:?}")),
                }
            }
            "videos" => self.videos = positive(v)?,
            "dataset" => self.dataset = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "log" => self.log = v.into(),
            "predictions" => self.predictions = v.into(),
            "report" => self.report = v.into(),
            "render_dir" => self.render_dir = v.into(),
            "graph_dump" => self.graph_dump = v.into(),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let k = k.trim();
            self.set(k, v).map_err(|m| err(format!("{k}: {m}")))?;
        }
        Ok(())
    }

    /// Applies `--key value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let err = |message: String| Error::Config { line: 0, message };
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag.strip_prefix("--").ok_or_else(|| err(format!("expected --key, got {flag:?}")))?;
            let value = it.next().ok_or_else(|| err(format!("--{key} needs a value")))?;
            self.set(key, value).map_err(|m| err(format!("--{key}: {m}")))?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::format(path, e.utf8_error().valid_up_to(), "config is not utf-8"))?;
        Self::parse_str(&text)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            backbone_width: self.backbone_width,
            classes: self.classes,
            iterations: self.iterations,
            window: self.window,
            ..ModelConfig::default()
        }
    }

    pub fn infer(&self) -> InferConfig {
        InferConfig {
            det_threshold: self.det_threshold,
            assoc_threshold: self.assoc_threshold,
            delta_t: self.delta_t,
            top_k: self.top_k,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            det: self.lambda_det,
            mask: self.lambda_mask,
            edge: self.lambda_edge,
            size: self.lambda_size,
            offset: self.lambda_offset,
            reference_det: self.lambda_reference,
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        let mut opt = match self.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(self.lr, self.momentum, self.milestones.clone()),
            OptimizerKind::Adam => Optimizer::adam(self.lr, self.milestones.clone()),
        };
        opt.clip_norm = (self.clip_norm > 0.0).then_some(self.clip_norm);
        opt
    }

    pub fn synth(&self) -> SynthConfig {
        match self.preset {
            Preset::Easy => SynthConfig::easy(),
            Preset::Standard => SynthConfig::default(),
        }
    }
}
