//! Bipartite inter-frame graph and its message passing.
//!
//! Reference-frame instances become k-nodes; every cell of the target
//! feature map becomes a t-node. Edges only join a k-node to the t-nodes
//! inside a `w × w` window around its center cell. Node and edge features
//! live on the tape so the whole update is differentiable.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::geometry::BBox;
use crate::nn::{flatten_node_feature, roi_align, Mlp};
use crate::params::Ctx;
use crate::{Error, Result};

/// Identity and placement of a reference-frame node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KNode {
    pub instance_id: u64,
    pub class_id: usize,
    /// Feature-grid cell holding the instance center, `(x, y)`.
    pub center: (usize, usize),
}

/// A reference instance from which a k-node feature is cropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphInstance {
    pub instance_id: u64,
    pub class_id: usize,
    /// Box in feature coordinates.
    pub bbox: BBox,
    pub center: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    /// Index into `FrameGraph::k_nodes`.
    pub k: usize,
    /// Flat t-node index `y * width + x`.
    pub t: usize,
}

#[derive(Debug, Clone)]
pub struct FrameGraph {
    pub k_nodes: Vec<KNode>,
    /// `[m, D]`
    pub k_features: Var,
    /// `[H·W, D]`, row `y * width + x`.
    pub t_features: Var,
    pub edges: Vec<Edge>,
    /// `[E, D]`
    pub edge_features: Var,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub window: usize,
}

/// One line of the edge debug dump.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSummary {
    pub k_instance_id: u64,
    pub t_x: usize,
    pub t_y: usize,
    pub feature_norm: f64,
}

fn map_dims(tape: &Tape, f: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    match *tape.shape(f) {
        [d, h, w] => Ok((d, h, w)),
        _ => Err(Error::InvalidShape {
            op,
            shape: tape.shape(f).to_vec(),
            reason: "feature map must be [D, H, W]",
        }),
    }
}

/// t-node positions within the window of `center`: Chebyshev distance
/// strictly below `window / 2`.
pub fn window_cells(center: (usize, usize), window: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let half = window as f64 / 2.0;
    let (cx, cy) = (center.0 as f64, center.1 as f64);
    (0..height).flat_map(move |y| (0..width).map(move |x| (x, y))).filter(move |&(x, y)| {
        let dx = (x as f64 - cx).abs();
        let dy = (y as f64 - cy).abs();
        dx.max(dy) < half
    })
}

/// Builds the graph from instances of the reference map `f_k`; k-node
/// features are ROIAlign crops averaged to one vector.
pub fn build_graph(
    tape: &mut Tape,
    instances: &[GraphInstance],
    f_k: Var,
    f_t: Var,
    window: usize,
    roi_out: usize,
) -> Result<FrameGraph> {
    let dk = map_dims(tape, f_k, "build_graph")?;
    let dt = map_dims(tape, f_t, "build_graph")?;
    if dk != dt {
        return Err(Error::ShapeMismatch {
            op: "build_graph",
            left: tape.shape(f_k).to_vec(),
            right: tape.shape(f_t).to_vec(),
        });
    }
    let mut nodes = Vec::with_capacity(instances.len());
    let mut feats = Vec::with_capacity(instances.len());
    for inst in instances {
        let patch = roi_align(tape, f_k, inst.bbox, roi_out)?;
        feats.push(flatten_node_feature(tape, patch)?);
        nodes.push(KNode {
            instance_id: inst.instance_id,
            class_id: inst.class_id,
            center: inst.center,
        });
    }
    build_graph_from_nodes(tape, nodes, &feats, f_t, window)
}

/// Builds the graph from ready-made k-node feature vectors (each `[D]`).
pub fn build_graph_from_nodes(
    tape: &mut Tape,
    k_nodes: Vec<KNode>,
    k_features: &[Var],
    f_t: Var,
    window: usize,
) -> Result<FrameGraph> {
    let (d, h, w) = map_dims(tape, f_t, "build_graph")?;
    assert_eq!(k_nodes.len(), k_features.len());
    let mut rows = Vec::with_capacity(k_features.len());
    for &f in k_features {
        if tape.shape(f) != [d] {
            return Err(Error::ShapeMismatch {
                op: "build_graph k-node feature",
                left: alloc::vec![d],
                right: tape.shape(f).to_vec(),
            });
        }
        rows.push(tape.reshape(f, &[1, d])?);
    }
    let k_feat = if rows.is_empty() {
        tape.constant(crate::Tensor::zeros(&[0, d]))
    } else {
        tape.concat(&rows, 0)?
    };
    let flat = tape.reshape(f_t, &[d, h * w])?;
    let t_feat = tape.transpose(flat)?;

    let mut edges = Vec::new();
    for (k, node) in k_nodes.iter().enumerate() {
        edges.extend(window_cells(node.center, window, w, h).map(|(x, y)| Edge { k, t: y * w + x }));
    }
    let ks: Vec<usize> = edges.iter().map(|e| e.k).collect();
    let ts: Vec<usize> = edges.iter().map(|e| e.t).collect();
    let hk = tape.gather_rows(k_feat, &ks)?;
    let ht = tape.gather_rows(t_feat, &ts)?;
    let diff = tape.sub(hk, ht)?;
    let edge_feat = tape.abs(diff);
    Ok(FrameGraph {
        k_nodes,
        k_features: k_feat,
        t_features: t_feat,
        edges,
        edge_features: edge_feat,
        height: h,
        width: w,
        dim: d,
        window,
    })
}

/// Runs `iterations` synchronous rounds of: every edge feature updated by
/// `n_e` from `[edge, k-end, t-end]`, then every node incremented by the
/// sum over its incident edges of `n_v([edge, node])`.
pub fn message_pass(ctx: &mut Ctx, graph: &FrameGraph, n_e: &Mlp, n_v: &Mlp, iterations: usize) -> Result<FrameGraph> {
    if iterations == 0 {
        return Err(Error::Invalid("message passing needs at least one iteration".into()));
    }
    let mut out = graph.clone();
    if graph.edges.is_empty() {
        return Ok(out);
    }
    let m = graph.k_nodes.len();
    let n = m + graph.height * graph.width;
    let d = graph.dim;
    let src: Vec<usize> = graph.edges.iter().map(|e| e.k).collect();
    let dst: Vec<usize> = graph.edges.iter().map(|e| m + e.t).collect();
    let tape = &mut ctx.tape;
    let mut nodes = tape.concat(&[graph.k_features, graph.t_features], 0)?;
    let mut edge = graph.edge_features;
    for _ in 0..iterations {
        let hs = ctx.tape.gather_rows(nodes, &src)?;
        let hd = ctx.tape.gather_rows(nodes, &dst)?;
        let ein = ctx.tape.concat(&[edge, hs, hd], 1)?;
        edge = n_e.forward(ctx, ein)?;
        let vin_s = ctx.tape.concat(&[edge, hs], 1)?;
        let vin_d = ctx.tape.concat(&[edge, hd], 1)?;
        let msg_s = n_v.forward(ctx, vin_s)?;
        let msg_d = n_v.forward(ctx, vin_d)?;
        let agg_s = ctx.tape.scatter_add_rows(msg_s, &src, n)?;
        let agg_d = ctx.tape.scatter_add_rows(msg_d, &dst, n)?;
        let agg = ctx.tape.add(agg_s, agg_d)?;
        nodes = ctx.tape.add(nodes, agg)?;
    }
    out.k_features = ctx.tape.slice(nodes, 0, &[m, d])?;
    out.t_features = ctx.tape.slice(nodes, m * d, &[n - m, d])?;
    out.edge_features = edge;
    Ok(out)
}

/// Reassembles the t-node features into a `[D, H, W]` map.
pub fn aggregate_feature(tape: &mut Tape, graph: &FrameGraph) -> Result<Var> {
    let t = tape.transpose(graph.t_features)?;
    tape.reshape(t, &[graph.dim, graph.height, graph.width])
}

pub fn edge_summaries(tape: &Tape, graph: &FrameGraph) -> Vec<EdgeSummary> {
    let d = graph.dim;
    let feats = tape.data(graph.edge_features);
    graph
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| EdgeSummary {
            k_instance_id: graph.k_nodes[e.k].instance_id,
            t_x: e.t % graph.width,
            t_y: e.t / graph.width,
            feature_norm: crate::math::sqrt(feats[i * d..(i + 1) * d].iter().map(|v| v * v).sum()),
        })
        .collect()
}
