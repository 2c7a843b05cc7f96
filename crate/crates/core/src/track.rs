//! Edge pruning, edge classification and association.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Var;
use crate::graph::FrameGraph;
use crate::nn::Mlp;
use crate::params::Ctx;
use crate::tensor::Tensor;
use crate::Result;

/// A target-frame candidate: a detection or ground-truth instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetNode {
    pub class_id: usize,
    /// Feature cell `(x, y)` of its center.
    pub cell: (usize, usize),
}

/// A graph edge kept for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrunedEdge {
    /// Index into `FrameGraph::edges`.
    pub edge: usize,
    /// Index into `FrameGraph::k_nodes`.
    pub k: usize,
    /// Index into the target list.
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeScore {
    pub k_instance_id: u64,
    pub t_detection_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub matched: Vec<(u64, usize)>,
    pub new_tracks: Vec<usize>,
    pub unmatched_k: Vec<u64>,
}

/// Keeps edges whose t-node is a target's center cell and whose k-node
/// has the target's class.
pub fn prune_edges(graph: &FrameGraph, targets: &[TargetNode]) -> Vec<PrunedEdge> {
    let mut out = Vec::new();
    for (i, e) in graph.edges.iter().enumerate() {
        let (x, y) = (e.t % graph.width, e.t / graph.width);
        for (j, t) in targets.iter().enumerate() {
            if t.cell == (x, y) && t.class_id == graph.k_nodes[e.k].class_id {
                out.push(PrunedEdge {
                    edge: i,
                    k: e.k,
                    target: j,
                });
            }
        }
    }
    out
}

/// Scores `[n]` in (0, 1) for the pruned edges.
pub fn classify_edges(ctx: &mut Ctx, graph: &FrameGraph, pruned: &[PrunedEdge], classifier: &Mlp) -> Result<Var> {
    if pruned.is_empty() {
        return Ok(ctx.tape.constant(Tensor::zeros(&[0])));
    }
    let rows: Vec<usize> = pruned.iter().map(|p| p.edge).collect();
    let feats = ctx.tape.gather_rows(graph.edge_features, &rows)?;
    let logits = classifier.forward(ctx, feats)?;
    let flat = ctx.tape.reshape(logits, &[pruned.len()])?;
    Ok(ctx.tape.sigmoid(flat))
}

pub fn edge_scores(graph: &FrameGraph, pruned: &[PrunedEdge], scores: &[f64]) -> Vec<EdgeScore> {
    pruned
        .iter()
        .zip(scores)
        .map(|(p, &score)| EdgeScore {
            k_instance_id: graph.k_nodes[p.k].instance_id,
            t_detection_index: p.target,
            score,
        })
        .collect()
}

/// Mean binary cross-entropy over the pruned edges; zero when none.
pub fn edge_loss(ctx: &mut Ctx, scores: Var, labels: &[bool]) -> Result<Var> {
    let labels = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    ctx.tape.bce_loss(scores, labels)
}

/// Greedy matching: edges with `score ≥ threshold` in descending score,
/// ties by lower k id then lower detection index, each accepted when
/// neither end is taken yet.
pub fn resolve_associations(scores: &[EdgeScore], k_ids: &[u64], detections: usize, threshold: f64) -> Assignment {
    let mut order: Vec<&EdgeScore> = scores.iter().filter(|s| s.score >= threshold).collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.k_instance_id.cmp(&b.k_instance_id))
            .then(a.t_detection_index.cmp(&b.t_detection_index))
    });
    let mut k_taken: Vec<u64> = Vec::new();
    let mut t_taken = vec![false; detections];
    let mut matched = Vec::new();
    for s in order {
        if s.t_detection_index >= detections || t_taken[s.t_detection_index] || k_taken.contains(&s.k_instance_id) {
            continue;
        }
        t_taken[s.t_detection_index] = true;
        k_taken.push(s.k_instance_id);
        matched.push((s.k_instance_id, s.t_detection_index));
    }
    Assignment {
        matched,
        new_tracks: (0..detections).filter(|&i| !t_taken[i]).collect(),
        unmatched_k: k_ids.iter().copied().filter(|k| !k_taken.contains(k)).collect(),
    }
}
