//! The `gen-data`, `train`, `infer`, `eval` and `render` subcommands.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use stgvis_core::graph::EdgeSummary;
use stgvis_core::metrics::{evaluate, ground_truth_tubes, EvalReport, VideoTubes};
use stgvis_core::pipeline::{infer_video, InferenceHooks, Model, NoHooks, Trainer};
use stgvis_core::synth::{generate_dataset, VideoDataset};

use crate::config::Config;
use crate::error::{write, Result};
use crate::ppm::{self, Image};
use crate::{checkpoint, dataset, predictions};

pub fn gen_data(cfg: &Config) -> Result<VideoDataset> {
    let data = generate_dataset(&cfg.synth(), cfg.videos, cfg.seed)?;
    dataset::write_dataset(&cfg.dataset, &data)?;
    Ok(data)
}

/// Trains from scratch, writing the CSV log and the checkpoint.
pub fn train(cfg: &Config) -> Result<Model> {
    let data = dataset::read_dataset(&cfg.dataset)?;
    let model = Model::new(cfg.model(), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.optimizer(), cfg.weights(), cfg.seed)?;
    let mut log = String::from("step,L_det,L_mask,L_edge,L_total\n");
    trainer.run(&data, cfg.steps, |i, l| {
        let _ = writeln!(log, "{},{},{},{},{}", i + 1, l.det, l.mask, l.edge, l.total);
    })?;
    write(&cfg.log, log.as_bytes())?;
    checkpoint::save(&trainer.model.store, &cfg.checkpoint)?;
    Ok(trainer.model)
}

pub fn load_model(cfg: &Config) -> Result<Model> {
    let mut model = Model::new(cfg.model(), cfg.seed)?;
    checkpoint::load_into(&mut model.store, &cfg.checkpoint)?;
    Ok(model)
}

#[derive(Serialize)]
struct GraphFrame {
    video: usize,
    frame: usize,
    edges: Vec<GraphEdge>,
}

#[derive(Serialize)]
struct GraphEdge {
    k_instance_id: u64,
    t_cell: [usize; 2],
    feature_norm: f64,
}

struct GraphDump {
    video: usize,
    frames: Vec<GraphFrame>,
}

impl InferenceHooks for GraphDump {
    fn graph(&mut self, frame: usize, edges: &[EdgeSummary]) {
        self.frames.push(GraphFrame {
            video: self.video,
            frame,
            edges: edges
                .iter()
                .map(|e| GraphEdge {
                    k_instance_id: e.k_instance_id,
                    t_cell: [e.t_x, e.t_y],
                    feature_norm: e.feature_norm,
                })
                .collect(),
        });
    }
}

/// Tracks every video of the dataset with the checkpointed model.
pub fn infer(cfg: &Config) -> Result<Vec<VideoTubes>> {
    let data = dataset::read_dataset(&cfg.dataset)?;
    let model = load_model(cfg)?;
    let dump = !cfg.graph_dump.as_os_str().is_empty();
    let mut graph = GraphDump {
        video: 0,
        frames: Vec::new(),
    };
    let mut out = Vec::with_capacity(data.videos.len());
    for (i, v) in data.videos.iter().enumerate() {
        graph.video = i;
        let hooks: &mut dyn InferenceHooks = if dump { &mut graph } else { &mut NoHooks };
        let pred = infer_video(&model, v, cfg.infer(), hooks)?;
        out.push(VideoTubes {
            video_id: i,
            num_frames: v.frames.len(),
            tubes: pred.tubes,
        });
    }
    let (h, w) = (data.videos[0].height, data.videos[0].width);
    predictions::save(&predictions::to_records(&out, h, w)?, &cfg.predictions)?;
    if dump {
        let json = serde_json::to_vec(&graph.frames).expect("graph dump serializes");
        write(&cfg.graph_dump, &json)?;
    }
    Ok(out)
}

fn load_predictions(cfg: &Config, data: &VideoDataset) -> Result<Vec<VideoTubes>> {
    let records = predictions::load(&cfg.predictions)?;
    let counts: Vec<usize> = data.videos.iter().map(|v| v.frames.len()).collect();
    predictions::from_records(&records, &counts, &cfg.predictions)
}

/// Scores the predictions file against the dataset annotations.
pub fn eval(cfg: &Config) -> Result<EvalReport> {
    let data = dataset::read_dataset(&cfg.dataset)?;
    let preds = load_predictions(cfg, &data)?;
    let gts: Vec<VideoTubes> = data.videos.iter().enumerate().map(|(i, v)| ground_truth_tubes(v, i)).collect();
    let report = evaluate(&preds, &gts)?;
    predictions::save_report(&report, &cfg.report)?;
    Ok(report)
}

/// Fixed color for a track identity.
pub fn identity_color(track_id: u64) -> [u8; 3] {
    // splitmix64 finalizer
    let mut z = track_id.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    // keep every channel away from black so overlays stay visible
    [64 + (z & 0xBF) as u8, 64 + ((z >> 8) & 0xBF) as u8, 64 + ((z >> 16) & 0xBF) as u8]
}

/// Writes one overlay image per frame; returns the number written.
pub fn render(cfg: &Config) -> Result<usize> {
    let data = dataset::read_dataset(&cfg.dataset)?;
    let preds = load_predictions(cfg, &data)?;
    let mut written = 0;
    for (vi, (v, p)) in data.videos.iter().zip(&preds).enumerate() {
        for (t, f) in v.frames.iter().enumerate() {
            let mut rgb = f.rgb.clone();
            for tube in &p.tubes {
                let Some(mask) = tube.masks.get(&t) else { continue };
                let color = identity_color(tube.track_id);
                for (px, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    for c in 0..3 {
                        let o = &mut rgb[px * 3 + c];
                        *o = ((*o as u16 + color[c] as u16) / 2) as u8;
                    }
                }
            }
            let img = Image {
                width: v.width,
                height: v.height,
                rgb,
            };
            ppm::save(&img, &render_path(&cfg.render_dir, vi, t))?;
            written += 1;
        }
    }
    Ok(written)
}

pub fn render_path(root: &Path, video: usize, frame: usize) -> std::path::PathBuf {
    dataset::frame_path(root, video, frame)
}
