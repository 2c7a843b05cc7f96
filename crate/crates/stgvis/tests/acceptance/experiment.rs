//! Training experiments on the easy synthetic set and the end-to-end
//! determinism check.

use std::path::Path;
use std::time::{Duration, Instant};

use stgvis::{commands, Config};
use stgvis_core::metrics::EvalReport;
use stgvis_core::optim::Optimizer;
use stgvis_core::pipeline::{evaluate_dataset, InferConfig, LossWeights, Model, ModelConfig, Trainer};
use stgvis_core::synth::{generate_dataset, SynthConfig, VideoDataset};

use super::Verdict;

/// Loss must fall to at most this fraction of its starting average.
const LOSS_DROP_RATIO: f64 = 0.5;
const LOSS_STEPS: usize = 300;
const LOSS_WINDOW: usize = 10;
const LOSS_BUDGET: Duration = Duration::from_secs(600);

/// Seeds and sizes of the easy-set splits.
const TRAIN_SEED: u64 = 1;
const TEST_SEED: u64 = 2;
const TRAIN_VIDEOS: usize = 512;
const TEST_VIDEOS: usize = 32;

/// The reference training run reached AP 0.689 (AP50 and AP75 1.0).
const AP_TARGET: f64 = 0.6;
const AP_STEPS: usize = 6000;
const AP_BUDGET: Duration = Duration::from_secs(30 * 60);

const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_STEPS: usize = 2000;

fn model_config(iterations: usize) -> ModelConfig {
    ModelConfig {
        dim: 32,
        classes: 2,
        iterations,
        ..ModelConfig::default()
    }
}

fn optimizer(steps: usize) -> Optimizer {
    let mut opt = Optimizer::adam(1e-3, vec![steps * 3 / 4]);
    opt.clip_norm = Some(10.0);
    opt
}

fn easy(videos: usize, seed: u64) -> VideoDataset {
    generate_dataset(&SynthConfig::easy(), videos, seed).expect("easy preset is valid")
}

/// The easy split with shapes free to cross, so association is not trivial.
fn crossing(videos: usize, seed: u64) -> VideoDataset {
    let cfg = SynthConfig { min_gap: None, ..SynthConfig::easy() };
    generate_dataset(&cfg, videos, seed).expect("crossing preset is valid")
}

fn train(data: &VideoDataset, iterations: usize, steps: usize, seed: u64) -> (Model, Vec<f64>) {
    let model = Model::new(model_config(iterations), seed).unwrap();
    let mut trainer = Trainer::new(model, optimizer(steps), LossWeights::default(), seed).unwrap();
    let losses = trainer.run(data, steps, |_, _| {}).unwrap();
    (trainer.model, losses.iter().map(|l| l.total).collect())
}

pub fn training_loss_drop() -> Verdict {
    let start = Instant::now();
    let data = easy(TRAIN_VIDEOS, TRAIN_SEED);
    let (_, losses) = train(&data, 3, LOSS_STEPS, 0);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&losses[..LOSS_WINDOW]);
    let last = mean(&losses[LOSS_STEPS - LOSS_WINDOW..]);
    let elapsed = start.elapsed();
    Verdict::new(
        last <= LOSS_DROP_RATIO * first && elapsed < LOSS_BUDGET,
        format!("first-{LOSS_WINDOW} mean {first:.4}, last-{LOSS_WINDOW} mean {last:.4}, ratio {:.3} (max {LOSS_DROP_RATIO})", last / first),
    )
}

fn held_out(model: &Model, test: &VideoDataset) -> EvalReport {
    evaluate_dataset(model, test, InferConfig::default()).unwrap()
}

pub fn held_out_ap() -> Verdict {
    let start = Instant::now();
    let (model, _) = train(&easy(TRAIN_VIDEOS, TRAIN_SEED), 3, AP_STEPS, 0);
    let r = held_out(&model, &easy(TEST_VIDEOS, TEST_SEED));
    let elapsed = start.elapsed();
    Verdict::new(
        r.ap >= AP_TARGET && elapsed < AP_BUDGET,
        format!("AP {:.4} (target {AP_TARGET}), AP50 {:.4}, AP75 {:.4}, {AP_STEPS} steps", r.ap, r.ap50, r.ap75),
    )
}

/// Mean held-out AP over the ablation seeds for `iterations` GNN rounds.
fn ablation_ap(data: &VideoDataset, test: &VideoDataset, iterations: usize) -> (f64, Vec<f64>) {
    let aps: Vec<f64> = ABLATION_SEEDS
        .iter()
        .map(|&seed| held_out(&train(data, iterations, ABLATION_STEPS, seed).0, test).ap)
        .collect();
    (aps.iter().sum::<f64>() / aps.len() as f64, aps)
}

pub fn ablation() -> Verdict {
    let (data, test) = (crossing(TRAIN_VIDEOS, TRAIN_SEED), crossing(TEST_VIDEOS, TEST_SEED));
    let (one, one_aps) = ablation_ap(&data, &test, 1);
    let (three, three_aps) = ablation_ap(&data, &test, 3);
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    Verdict::new(
        three >= one,
        format!("mean AP L=3 {three:.4} [{}], L=1 {one:.4} [{}]", fmt(&three_aps), fmt(&one_aps)),
    )
}

fn pipeline_run(dir: &Path) -> stgvis::Result<(Vec<u8>, Vec<u8>)> {
    let mut cfg = Config::default();
    let p = |name: &str| dir.join(name);
    cfg.dataset = p("data");
    cfg.checkpoint = p("model.ckpt");
    cfg.log = p("train.csv");
    cfg.predictions = p("predictions.json");
    cfg.report = p("report.json");
    cfg.apply_overrides(
        &["--videos", "3", "--steps", "25", "--D", "8", "--backbone_width", "4", "--optimizer", "adam", "--lr", "0.001", "--seed", "11", "--tau_det", "0.02"]
            .map(String::from),
    )?;
    commands::gen_data(&cfg)?;
    commands::train(&cfg)?;
    commands::infer(&cfg)?;
    commands::eval(&cfg)?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| stgvis::Error::Io { path: p.into(), source: e });
    Ok((read(&cfg.predictions)?, read(&cfg.report)?))
}

pub fn determinism() -> Verdict {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            pipeline_run(dir.path())
        })
        .collect();
    match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => {
            let tracks = serde_json::from_slice::<Vec<serde_json::Value>>(&a.0).map_or(0, |v| v.len());
            Verdict::new(
                a == b && tracks > 0,
                format!("{tracks} tracks, predictions {} bytes, report {} bytes, identical: {}", a.0.len(), a.1.len(), a == b),
            )
        }
        (Err(e), _) | (_, Err(e)) => Verdict::new(false, format!("pipeline failed: {e}")),
    }
}
