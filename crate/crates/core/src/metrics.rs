//! Run-length mask codec, tube IoU and video-level AP/AR.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use crate::synth::Video;
use crate::{Error, Result};

/// Alternating zero/one run lengths over the row-major mask, starting
/// with a (possibly empty) zero run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRle {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<usize>,
}

impl MaskRle {
    pub fn encode(mask: &[bool], height: usize, width: usize) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::RleLength {
                sum: mask.len(),
                expected: height * width,
            });
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &m in mask {
            if m != current {
                runs.push(len);
                current = m;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        Ok(Self { height, width, runs })
    }

    pub fn decode(&self) -> Result<Vec<bool>> {
        let sum: usize = self.runs.iter().sum();
        if sum != self.height * self.width {
            return Err(Error::RleLength {
                sum,
                expected: self.height * self.width,
            });
        }
        let mut out = Vec::with_capacity(sum);
        for (i, &r) in self.runs.iter().enumerate() {
            out.extend(core::iter::repeat_n(i % 2 == 1, r));
        }
        Ok(out)
    }

    pub fn area(&self) -> usize {
        self.runs.iter().skip(1).step_by(2).sum()
    }
}

/// `HxW:r0 r1 ...`
impl fmt::Display for MaskRle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}:", self.height, self.width)?;
        for (i, r) in self.runs.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

impl FromStr for MaskRle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("malformed RLE string {s:?}"));
        let (dims, runs) = s.split_once(':').ok_or_else(bad)?;
        let (h, w) = dims.split_once('x').ok_or_else(bad)?;
        let height = h.trim().parse().map_err(|_| bad())?;
        let width = w.trim().parse().map_err(|_| bad())?;
        let runs = runs
            .split_whitespace()
            .map(|r| r.parse().map_err(|_| bad()))
            .collect::<Result<Vec<usize>>>()?;
        let rle = Self { height, width, runs };
        let sum: usize = rle.runs.iter().sum();
        if sum != height * width {
            return Err(Error::RleLength {
                sum,
                expected: height * width,
            });
        }
        Ok(rle)
    }
}

/// A track's masks over the frames of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub track_id: u64,
    pub class_id: usize,
    /// Confidence; ignored for ground truth.
    pub score: f64,
    /// Frame index → row-major mask. Missing frames count as empty.
    pub masks: BTreeMap<usize, Vec<bool>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoTubes {
    pub video_id: usize,
    pub num_frames: usize,
    pub tubes: Vec<Tube>,
}

/// Ground-truth tubes of a video, one per identity, ordered by id.
pub fn ground_truth_tubes(video: &Video, video_id: usize) -> VideoTubes {
    let mut tubes: BTreeMap<u64, Tube> = BTreeMap::new();
    for (t, f) in video.frames.iter().enumerate() {
        for a in &f.instances {
            let tube = tubes.entry(a.id).or_insert_with(|| Tube {
                track_id: a.id,
                class_id: a.class_id,
                score: 1.0,
                masks: BTreeMap::new(),
            });
            tube.masks.insert(t, a.mask.clone());
        }
    }
    VideoTubes {
        video_id,
        num_frames: video.frames.len(),
        tubes: tubes.into_values().collect(),
    }
}

/// Σ|P∩G| / Σ|P∪G| over `frames`; 1 when both tubes are empty.
pub fn tube_iou(pred: &Tube, gt: &Tube, frames: Range<usize>) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for t in frames {
        match (pred.masks.get(&t), gt.masks.get(&t)) {
            (Some(p), Some(g)) => {
                for (&a, &b) in p.iter().zip(g) {
                    inter += (a && b) as usize;
                    union += (a || b) as usize;
                }
            }
            (Some(m), None) | (None, Some(m)) => union += m.iter().filter(|&&v| v).count(),
            (None, None) => {}
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `0.50, 0.55, …, 0.95`
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub num_gt: usize,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub per_class: Vec<ClassReport>,
}

const MAX_DETS: usize = 100;
const RECALL_POINTS: usize = 101;

/// One prediction matched at one threshold.
struct Scored {
    score: f64,
    video: usize,
    track: u64,
    tp: bool,
}

struct Outcome {
    precision: f64,
    recall: f64,
}

/// Greedy per-video matching of class `c` predictions (descending score)
/// to ground truth, keeping at most `max_dets` predictions per video.
fn match_class(preds: &[VideoTubes], gts: &[VideoTubes], ious: &[Vec<Vec<f64>>], c: usize, thr: f64, max_dets: usize) -> (Vec<Scored>, usize) {
    let mut out = Vec::new();
    let mut num_gt = 0;
    for (v, (pv, gv)) in preds.iter().zip(gts).enumerate() {
        let gt_idx: Vec<usize> = (0..gv.tubes.len()).filter(|&j| gv.tubes[j].class_id == c).collect();
        num_gt += gt_idx.len();
        let mut pr_idx: Vec<usize> = (0..pv.tubes.len()).filter(|&i| pv.tubes[i].class_id == c).collect();
        pr_idx.sort_by(|&a, &b| {
            pv.tubes[b]
                .score
                .total_cmp(&pv.tubes[a].score)
                .then(pv.tubes[a].track_id.cmp(&pv.tubes[b].track_id))
        });
        pr_idx.truncate(max_dets);
        let mut taken = vec![false; gt_idx.len()];
        for &i in &pr_idx {
            let mut best: Option<(usize, f64)> = None;
            for (g, &j) in gt_idx.iter().enumerate() {
                let iou = ious[v][i][j];
                if taken[g] || iou < thr {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            out.push(Scored {
                score: pv.tubes[i].score,
                video: v,
                track: pv.tubes[i].track_id,
                tp: best.is_some(),
            });
        }
    }
    (out, num_gt)
}

/// 101-point interpolated precision and final recall.
fn accumulate(mut dets: Vec<Scored>, num_gt: usize) -> Outcome {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.video.cmp(&b.video)).then(a.track.cmp(&b.track)));
    let mut rc = Vec::with_capacity(dets.len());
    let mut pr = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for d in &dets {
        if d.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        rc.push(tp as f64 / num_gt as f64);
        pr.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let i = rc.partition_point(|&x| x < r);
        if i < pr.len() {
            sum += pr[i];
        }
    }
    Outcome {
        precision: sum / RECALL_POINTS as f64,
        recall: rc.last().copied().unwrap_or(0.0),
    }
}

/// AP over `0.50:0.05:0.95` and the classes present in the ground truth,
/// plus AR with at most 1 and 10 predictions per video. `preds[i]` and
/// `gts[i]` must describe the same video.
pub fn evaluate(preds: &[VideoTubes], gts: &[VideoTubes]) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::Invalid(format!("{} predicted videos for {} ground-truth videos", preds.len(), gts.len())));
    }
    for (p, g) in preds.iter().zip(gts) {
        if p.video_id != g.video_id {
            return Err(Error::Invalid(format!("video {} paired with ground truth {}", p.video_id, g.video_id)));
        }
    }
    let ious: Vec<Vec<Vec<f64>>> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let frames = 0..p.num_frames.max(g.num_frames);
            p.tubes.iter().map(|a| g.tubes.iter().map(|b| tube_iou(a, b, frames.clone())).collect()).collect()
        })
        .collect();
    let mut classes: Vec<usize> = gts.iter().flat_map(|g| g.tubes.iter().map(|t| t.class_id)).collect();
    classes.sort_unstable();
    classes.dedup();
    let thresholds = iou_thresholds();
    let mut per_class = Vec::new();
    let (mut ar1, mut ar10) = (0.0, 0.0);
    for &c in &classes {
        let mut aps = Vec::with_capacity(thresholds.len());
        let mut num_gt = 0;
        for &thr in &thresholds {
            let (dets, n) = match_class(preds, gts, &ious, c, thr, MAX_DETS);
            num_gt = n;
            aps.push(accumulate(dets, n).precision);
            for (max, acc) in [(1, &mut ar1), (10, &mut ar10)] {
                let (dets, n) = match_class(preds, gts, &ious, c, thr, max);
                *acc += accumulate(dets, n).recall;
            }
        }
        per_class.push(ClassReport {
            class_id: c,
            num_gt,
            ap: mean(&aps),
            ap50: aps[0],
            ap75: aps[5],
        });
    }
    let n = (classes.len() * thresholds.len()).max(1) as f64;
    let avg = |f: fn(&ClassReport) -> f64| {
        if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
        }
    };
    Ok(EvalReport {
        ap: avg(|c| c.ap),
        ap50: avg(|c| c.ap50),
        ap75: avg(|c| c.ap75),
        ar1: ar1 / n,
        ar10: ar10 / n,
        per_class,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl EvalReport {
    /// Aligned-text summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<8} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "", "AP", "AP50", "AP75", "AR1", "AR10"));
        s.push_str(&format!(
            "{:<8} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
            "all", self.ap, self.ap50, self.ap75, self.ar1, self.ar10
        ));
        for c in &self.per_class {
            s.push_str(&format!(
                "{:<8} {:>7.4} {:>7.4} {:>7.4} {:>7} {:>7}\n",
                format!("class {}", c.class_id),
                c.ap,
                c.ap50,
                c.ap75,
                "-",
                "-"
            ));
        }
        s
    }
}
