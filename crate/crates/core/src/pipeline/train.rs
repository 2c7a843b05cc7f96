use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Model, STRIDE};
use crate::autodiff::{Tape, Var};
use crate::detect::{detect_loss, DetTargets, GtObject};
use crate::geometry::{cell_of, BBox};
use crate::graph::{aggregate_feature, build_graph, message_pass, GraphInstance};
use crate::optim::Optimizer;
use crate::params::Ctx;
use crate::seg::{downsample_mask, mask_dice};
use crate::synth::{Video, VideoDataset};
use crate::tensor::Tensor;
use crate::track::{classify_edges, edge_loss, prune_edges, TargetNode};
use crate::{Error, Result};

/// Largest frame gap between reference and target.
pub const MAX_GAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub det: f64,
    pub mask: f64,
    pub edge: f64,
    pub size: f64,
    pub offset: f64,
    /// Weight of the detection loss on the raw reference features, which
    /// is what the first frame of a video is decoded from.
    pub reference_det: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            det: 1.0,
            mask: 1.0,
            edge: 1.0,
            size: 0.1,
            offset: 1.0,
            reference_det: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.det, self.mask, self.edge, self.size, self.offset, self.reference_det];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub det: f64,
    pub mask: f64,
    pub edge: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub det: Var,
    pub mask: Var,
    pub edge: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub video: usize,
    pub reference: usize,
    pub target: usize,
}

/// A uniformly drawn video with at least two frames, then a uniformly
/// drawn ordered frame pair with `1 ≤ target − reference ≤ 4`.
pub fn sample_training_pair(dataset: &VideoDataset, rng: &mut impl Rng) -> Option<TrainingPair> {
    let eligible: Vec<usize> = (0..dataset.videos.len()).filter(|&i| dataset.videos[i].frames.len() >= 2).collect();
    if eligible.is_empty() {
        return None;
    }
    let video = eligible[rng.random_range(0..eligible.len())];
    let n = dataset.videos[video].frames.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|k| (k + 1..n.min(k + MAX_GAP + 1)).map(move |t| (k, t)))
        .collect();
    let (reference, target) = pairs[rng.random_range(0..pairs.len())];
    Some(TrainingPair { video, reference, target })
}

/// A ground-truth instance on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureInstance {
    pub id: u64,
    pub class_id: usize,
    pub bbox: BBox,
    pub center: (f64, f64),
    pub cell: (usize, usize),
    /// Grid-resolution mask.
    pub mask: Vec<f64>,
}

pub fn feature_instances(video: &Video, frame: usize) -> Vec<FeatureInstance> {
    let (gh, gw) = (video.height / STRIDE, video.width / STRIDE);
    video.frames[frame]
        .instances
        .iter()
        .map(|a| {
            let bbox = a.bbox.scaled(1.0 / STRIDE as f64);
            let center = bbox.center();
            FeatureInstance {
                id: a.id,
                class_id: a.class_id,
                bbox,
                center,
                cell: cell_of(center.0, center.1, gw, gh),
                mask: downsample_mask(&a.mask, video.height, video.width, STRIDE),
            }
        })
        .collect()
}

fn targets_of(instances: &[FeatureInstance], classes: usize, h: usize, w: usize) -> DetTargets {
    let objects: Vec<GtObject> = instances
        .iter()
        .map(|i| GtObject {
            class_id: i.class_id,
            center: i.center,
            size: (i.bbox.width(), i.bbox.height()),
        })
        .collect();
    DetTargets::encode(&objects, classes, h, w)
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = tape.constant(Tensor::scalar(0.0));
    for &t in terms {
        acc = tape.add(acc, t)?;
    }
    Ok(if terms.is_empty() { acc } else { tape.scale(acc, 1.0 / terms.len() as f64) })
}

fn has_pixels(mask: &[f64]) -> bool {
    mask.iter().any(|&v| v > 0.0)
}

/// Records the full training forward pass for one frame pair.
pub fn compute_losses(ctx: &mut Ctx, model: &Model, video: &Video, pair: TrainingPair, weights: &LossWeights) -> Result<LossVars> {
    let cfg = &model.config;
    let img_k = ctx.tape.constant(video.image(pair.reference));
    let img_t = ctx.tape.constant(video.image(pair.target));
    let f_k = model.backbone.forward(ctx, img_k)?;
    let f_t = model.backbone.forward(ctx, img_t)?;
    let [_, gh, gw] = *ctx.tape.shape(f_t) else {
        unreachable!("backbone output is [D, H, W]")
    };
    let refs = feature_instances(video, pair.reference);
    let tgts = feature_instances(video, pair.target);

    let nodes: Vec<GraphInstance> = refs
        .iter()
        .map(|r| GraphInstance {
            instance_id: r.id,
            class_id: r.class_id,
            bbox: r.bbox,
            center: r.cell,
        })
        .collect();
    let graph = build_graph(&mut ctx.tape, &nodes, f_k, f_t, cfg.window, cfg.roi_out)?;
    let graph = message_pass(ctx, &graph, &model.edge_mlp, &model.node_mlp, cfg.iterations)?;
    let f_hat = aggregate_feature(&mut ctx.tape, &graph)?;

    let maps = model.detect.forward(ctx, f_hat)?;
    let targets = targets_of(&tgts, cfg.classes, gh, gw);
    let mut det = detect_loss(ctx, &maps, &targets, weights.size, weights.offset)?.total;
    if weights.reference_det > 0.0 {
        let maps_k = model.detect.forward(ctx, f_k)?;
        let targets_k = targets_of(&refs, cfg.classes, gh, gw);
        let l = detect_loss(ctx, &maps_k, &targets_k, weights.size, weights.offset)?.total;
        let l = ctx.tape.scale(l, weights.reference_det);
        det = ctx.tape.add(det, l)?;
    }

    let theta_t = model.seg.controller_forward(ctx, f_hat)?;
    let feats_t = model.seg.reduce_channels(ctx, f_hat)?;
    let theta_k = model.seg.controller_forward(ctx, f_k)?;
    let feats_k = model.seg.reduce_channels(ctx, f_k)?;
    let theta_warp = model.seg.warp.forward(ctx, f_k, f_t, theta_k)?;
    let mut target_terms = Vec::new();
    for inst in tgts.iter().filter(|i| has_pixels(&i.mask)) {
        let logits = model.seg.instance_logits(ctx, feats_t, theta_t, inst.cell, inst.cell)?;
        let plain = mask_dice(ctx, logits, &inst.mask)?;
        let term = if refs.iter().any(|r| r.id == inst.id) {
            let logits = model.seg.instance_logits(ctx, feats_t, theta_warp, inst.cell, inst.cell)?;
            let warped = mask_dice(ctx, logits, &inst.mask)?;
            let s = ctx.tape.add(plain, warped)?;
            ctx.tape.scale(s, 0.5)
        } else {
            plain
        };
        target_terms.push(term);
    }
    let mut ref_terms = Vec::new();
    for inst in refs.iter().filter(|i| has_pixels(&i.mask)) {
        let logits = model.seg.instance_logits(ctx, feats_k, theta_k, inst.cell, inst.cell)?;
        ref_terms.push(mask_dice(ctx, logits, &inst.mask)?);
    }
    let mt = mean_of(&mut ctx.tape, &target_terms)?;
    let mr = mean_of(&mut ctx.tape, &ref_terms)?;
    let mask = ctx.tape.add(mt, mr)?;

    let tnodes: Vec<TargetNode> = tgts
        .iter()
        .map(|t| TargetNode {
            class_id: t.class_id,
            cell: t.cell,
        })
        .collect();
    let pruned = prune_edges(&graph, &tnodes);
    let scores = classify_edges(ctx, &graph, &pruned, &model.classifier)?;
    let labels: Vec<bool> = pruned.iter().map(|p| graph.k_nodes[p.k].instance_id == tgts[p.target].id).collect();
    let edge = edge_loss(ctx, scores, &labels)?;

    let a = ctx.tape.scale(det, weights.det);
    let b = ctx.tape.scale(mask, weights.mask);
    let c = ctx.tape.scale(edge, weights.edge);
    let ab = ctx.tape.add(a, b)?;
    let total = ctx.tape.add(ab, c)?;
    Ok(LossVars { det, mask, edge, total })
}

/// Forward, backward and one optimizer update on a frame pair.
pub fn train_step(model: &mut Model, opt: &mut Optimizer, video: &Video, pair: TrainingPair, weights: &LossWeights) -> Result<LossBreakdown> {
    let mut ctx = Ctx::new(&model.store);
    let vars = compute_losses(&mut ctx, model, video, pair, weights)?;
    let out = LossBreakdown {
        det: ctx.tape.item(vars.det),
        mask: ctx.tape.item(vars.mask),
        edge: ctx.tape.item(vars.edge),
        total: ctx.tape.item(vars.total),
    };
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            det: out.det,
            mask: out.mask,
            edge: out.edge,
        });
    }
    ctx.backward_into(vars.total, &mut model.store)?;
    opt.step(&mut model.store)?;
    Ok(out)
}

/// Seeded training loop state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: Optimizer,
    pub weights: LossWeights,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, optimizer: Optimizer, weights: LossWeights, seed: u64) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            model,
            optimizer,
            weights,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn step(&mut self, dataset: &VideoDataset) -> Result<(TrainingPair, LossBreakdown)> {
        let pair = sample_training_pair(dataset, &mut self.rng)
            .ok_or_else(|| Error::Invalid("no video has two or more frames".into()))?;
        let loss = train_step(&mut self.model, &mut self.optimizer, &dataset.videos[pair.video], pair, &self.weights)?;
        Ok((pair, loss))
    }

    pub fn run(&mut self, dataset: &VideoDataset, steps: usize, mut on_step: impl FnMut(usize, &LossBreakdown)) -> Result<Vec<LossBreakdown>> {
        let mut out = Vec::with_capacity(steps);
        for i in 0..steps {
            let (_, loss) = self.step(dataset)?;
            on_step(i, &loss);
            out.push(loss);
        }
        Ok(out)
    }
}
