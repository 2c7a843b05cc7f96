use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{Model, STRIDE};
use crate::detect::{decode_detections, Detection};
use crate::geometry::BBox;
use crate::graph::{aggregate_feature, build_graph_from_nodes, edge_summaries, message_pass, EdgeSummary, KNode};
use crate::metrics::{evaluate, ground_truth_tubes, EvalReport, Tube, VideoTubes};
use crate::nn::{flatten_node_feature, roi_align};
use crate::params::Ctx;
use crate::seg::{binarize_logits, upsample_nearest, FILTER_LEN};
use crate::synth::{Video, VideoDataset};
use crate::tensor::Tensor;
use crate::track::{classify_edges, edge_scores, prune_edges, resolve_associations, EdgeScore, TargetNode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub det_threshold: f64,
    pub assoc_threshold: f64,
    /// Frames an unmatched identity is remembered.
    pub delta_t: usize,
    pub top_k: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            det_threshold: 0.3,
            assoc_threshold: 0.5,
            delta_t: 7,
            top_k: 20,
        }
    }
}

/// An identity that went unmatched, kept for re-association.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub track_id: u64,
    pub class_id: usize,
    /// Node feature `[D]`.
    pub feature: Vec<f64>,
    /// Mask-head filters `[169]`.
    pub filters: Vec<f64>,
    /// Feature-grid box at the last sighting.
    pub last_box: BBox,
    pub center: (usize, usize),
    /// Frame the entry was stamped with.
    pub last_seen: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackMemory {
    entries: Vec<MemoryEntry>,
}

impl TrackMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, track_id: u64) -> bool {
        self.entries.iter().any(|e| e.track_id == track_id)
    }

    /// Adds or refreshes an entry under its own stamp.
    pub fn insert(&mut self, entry: MemoryEntry) {
        match self.entries.iter_mut().find(|e| e.track_id == entry.track_id) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn remove(&mut self, track_id: u64) -> Option<MemoryEntry> {
        let i = self.entries.iter().position(|e| e.track_id == track_id)?;
        Some(self.entries.remove(i))
    }

    /// Drops entries with `frame − last_seen > delta_t`.
    pub fn evict(&mut self, frame: usize, delta_t: usize) {
        self.entries.retain(|e| frame.saturating_sub(e.last_seen) <= delta_t);
    }

    /// Evicts expired entries, then inserts `unmatched` stamped `frame`.
    pub fn update(&mut self, unmatched: Vec<MemoryEntry>, frame: usize, delta_t: usize) {
        self.evict(frame, delta_t);
        for mut e in unmatched {
            e.last_seen = frame;
            self.insert(e);
        }
    }
}

/// Overrides for testing and inspection; defaults pass values through.
pub trait InferenceHooks {
    fn detections(&mut self, _frame: usize, decoded: Vec<Detection>) -> Vec<Detection> {
        decoded
    }

    fn edge_scores(&mut self, _frame: usize, scores: Vec<EdgeScore>) -> Vec<EdgeScore> {
        scores
    }

    /// Track identity given to each detection of the frame.
    fn assigned(&mut self, _frame: usize, _track_ids: &[u64]) {}

    /// Graph edges of the frame, before pruning.
    fn graph(&mut self, _frame: usize, _edges: &[EdgeSummary]) {}
}

pub struct NoHooks;

impl InferenceHooks for NoHooks {}

#[derive(Debug, Clone)]
struct LiveTrack {
    id: u64,
    class_id: usize,
    feature: Vec<f64>,
    filters: Vec<f64>,
    bbox: BBox,
    center: (usize, usize),
}

#[derive(Debug, Clone, Default)]
struct TrackRecord {
    class_votes: Vec<usize>,
    scores: Vec<f64>,
    masks: BTreeMap<usize, Vec<bool>>,
}

/// Online state over one video.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: InferConfig,
    pub memory: TrackMemory,
    live: Vec<LiveTrack>,
    next_id: u64,
    records: BTreeMap<u64, TrackRecord>,
    frames: Vec<Vec<(u64, Detection)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    /// One tube per identity, masks at image resolution.
    pub tubes: Vec<Tube>,
    /// Per frame, the identity and detection of each output instance.
    pub frames: Vec<Vec<(u64, Detection)>>,
}

impl Tracker {
    pub fn new(config: InferConfig) -> Self {
        Self {
            config,
            memory: TrackMemory::new(),
            live: Vec::new(),
            next_id: 1,
            records: BTreeMap::new(),
            frames: Vec::new(),
        }
    }

    /// Processes frame `t` (frames must arrive in order) and returns the
    /// identity of each detection.
    pub fn step(&mut self, model: &Model, image: &Tensor, hooks: &mut dyn InferenceHooks) -> Result<Vec<(u64, Detection)>> {
        let t = self.frames.len();
        let cfg = self.config;
        self.memory.evict(t, cfg.delta_t);
        let mut ctx = Ctx::inference(&model.store);
        let img = ctx.tape.constant(image.clone());
        let f_t = model.backbone.forward(&mut ctx, img)?;
        let [_, gh, gw] = *ctx.tape.shape(f_t) else {
            unreachable!("backbone output is [D, H, W]")
        };

        let mut k_nodes = Vec::new();
        let mut k_feats = Vec::new();
        for (id, class_id, center, feature) in self
            .live
            .iter()
            .map(|l| (l.id, l.class_id, l.center, &l.feature))
            .chain(self.memory.entries().iter().map(|e| (e.track_id, e.class_id, e.center, &e.feature)))
        {
            k_nodes.push(KNode {
                instance_id: id,
                class_id,
                center,
            });
            k_feats.push(ctx.tape.constant(Tensor::from_vec(feature.clone())));
        }
        let k_ids: Vec<u64> = k_nodes.iter().map(|k| k.instance_id).collect();
        let graph = if k_nodes.is_empty() {
            None
        } else {
            let g = build_graph_from_nodes(&mut ctx.tape, k_nodes, &k_feats, f_t, model.config.window)?;
            let g = message_pass(&mut ctx, &g, &model.edge_mlp, &model.node_mlp, model.config.iterations)?;
            hooks.graph(t, &edge_summaries(&ctx.tape, &g));
            Some(g)
        };
        let f_hat = match &graph {
            Some(g) => aggregate_feature(&mut ctx.tape, g)?,
            None => f_t,
        };

        let maps = model.detect.forward(&mut ctx, f_hat)?.values(&ctx);
        let dets = hooks.detections(t, decode_detections(&maps, cfg.top_k, cfg.det_threshold));
        let targets: Vec<TargetNode> = dets
            .iter()
            .map(|d| TargetNode {
                class_id: d.class_id,
                cell: d.cell(gw, gh),
            })
            .collect();
        let scores = match &graph {
            Some(g) => {
                let pruned = prune_edges(g, &targets);
                let v = classify_edges(&mut ctx, g, &pruned, &model.classifier)?;
                edge_scores(g, &pruned, ctx.tape.data(v))
            }
            None => Vec::new(),
        };
        let scores = hooks.edge_scores(t, scores);
        let assignment = resolve_associations(&scores, &k_ids, dets.len(), cfg.assoc_threshold);

        let mut ids = vec![0u64; dets.len()];
        for &(k, j) in &assignment.matched {
            ids[j] = k;
            self.memory.remove(k);
        }
        for &j in &assignment.new_tracks {
            ids[j] = self.next_id;
            self.next_id += 1;
        }
        hooks.assigned(t, &ids);

        let theta = model.seg.controller_forward(&mut ctx, f_hat)?;
        let feats = model.seg.reduce_channels(&mut ctx, f_hat)?;
        let theta_vals = ctx.tape.data(theta).to_vec();
        let mut live = Vec::with_capacity(dets.len());
        for (d, &id) in dets.iter().zip(&ids) {
            let cell = d.cell(gw, gh);
            let logits = model.seg.instance_logits(&mut ctx, feats, theta, cell, cell)?;
            let mask = upsample_nearest(&binarize_logits(ctx.tape.data(logits)), gh, gw, STRIDE);
            let patch = roi_align(&mut ctx.tape, f_t, d.bbox, model.config.roi_out)?;
            let node = flatten_node_feature(&mut ctx.tape, patch)?;
            let p = cell.1 * gw + cell.0;
            let rec = self.records.entry(id).or_default();
            rec.class_votes.push(d.class_id);
            rec.scores.push(d.score);
            rec.masks.insert(t, mask);
            live.push(LiveTrack {
                id,
                class_id: d.class_id,
                feature: ctx.tape.data(node).to_vec(),
                filters: (0..FILTER_LEN).map(|c| theta_vals[c * gh * gw + p]).collect(),
                bbox: d.bbox,
                center: cell,
            });
        }

        for k in &assignment.unmatched_k {
            if let Some(l) = self.live.iter().find(|l| l.id == *k) {
                self.memory.insert(MemoryEntry {
                    track_id: l.id,
                    class_id: l.class_id,
                    feature: l.feature.clone(),
                    filters: l.filters.clone(),
                    last_box: l.bbox,
                    center: l.center,
                    last_seen: t,
                });
            }
        }
        self.live = live;
        let out: Vec<(u64, Detection)> = ids.into_iter().zip(dets).collect();
        self.frames.push(out.clone());
        Ok(out)
    }

    pub fn finish(self) -> VideoPrediction {
        let tubes = self
            .records
            .into_iter()
            .map(|(id, rec)| Tube {
                track_id: id,
                class_id: majority(&rec.class_votes),
                score: rec.scores.iter().sum::<f64>() / rec.scores.len() as f64,
                masks: rec.masks,
            })
            .collect();
        VideoPrediction {
            tubes,
            frames: self.frames,
        }
    }
}

/// Most frequent class; ties go to the lower id.
fn majority(votes: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let mut best = (0, 0);
    for (c, n) in counts {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

/// Runs the tracker over every frame of `video`.
pub fn infer_video(model: &Model, video: &Video, config: InferConfig, hooks: &mut dyn InferenceHooks) -> Result<VideoPrediction> {
    if !video.height.is_multiple_of(STRIDE) || !video.width.is_multiple_of(STRIDE) {
        return Err(Error::Invalid("video size must be a multiple of 4".into()));
    }
    let mut tracker = Tracker::new(config);
    for t in 0..video.frames.len() {
        tracker.step(model, &video.image(t), hooks)?;
    }
    Ok(tracker.finish())
}

/// Tracks every video and scores the tubes against the annotations.
pub fn evaluate_dataset(model: &Model, dataset: &VideoDataset, config: InferConfig) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(dataset.videos.len());
    let mut gts = Vec::with_capacity(dataset.videos.len());
    for (i, v) in dataset.videos.iter().enumerate() {
        let p = infer_video(model, v, config, &mut NoHooks)?;
        preds.push(VideoTubes {
            video_id: i,
            num_frames: v.frames.len(),
            tubes: p.tubes,
        });
        gts.push(ground_truth_tubes(v, i));
    }
    evaluate(&preds, &gts)
}
