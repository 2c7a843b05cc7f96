//! Predictions and evaluation reports as JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stgvis_core::metrics::{ClassReport, EvalReport, MaskRle, Tube, VideoTubes};

use crate::error::{read, write, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub video_id: usize,
    pub track_id: u64,
    pub class: usize,
    pub score: f64,
    pub frames: Vec<FrameMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMask {
    pub frame_index: usize,
    pub rle: String,
}

pub fn to_records(videos: &[VideoTubes], height: usize, width: usize) -> Result<Vec<TrackRecord>> {
    let mut out = Vec::new();
    for v in videos {
        for t in &v.tubes {
            let frames = t
                .masks
                .iter()
                .map(|(&frame_index, m)| {
                    Ok(FrameMask {
                        frame_index,
                        rle: MaskRle::encode(m, height, width)?.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
            out.push(TrackRecord {
                video_id: v.video_id,
                track_id: t.track_id,
                class: t.class_id,
                score: t.score,
                frames,
            });
        }
    }
    Ok(out)
}

/// Groups records into per-video tubes; `frame_counts[i]` is the length
/// of video `i`. Videos without records get an empty tube list.
pub fn from_records(records: &[TrackRecord], frame_counts: &[usize], path: &Path) -> Result<Vec<VideoTubes>> {
    let mut videos: Vec<VideoTubes> = frame_counts
        .iter()
        .enumerate()
        .map(|(video_id, &num_frames)| VideoTubes {
            video_id,
            num_frames,
            tubes: Vec::new(),
        })
        .collect();
    for (i, r) in records.iter().enumerate() {
        let at = format!("record {i}");
        let v = videos
            .get_mut(r.video_id)
            .ok_or_else(|| Error::format(path, &at, format!("unknown video {}", r.video_id)))?;
        let mut masks = BTreeMap::new();
        for f in &r.frames {
            if f.frame_index >= v.num_frames {
                return Err(Error::format(path, &at, format!("frame {} out of range", f.frame_index)));
            }
            let rle: MaskRle = f.rle.parse().map_err(|e| Error::format(path, &at, e))?;
            masks.insert(f.frame_index, rle.decode()?);
        }
        v.tubes.push(Tube {
            track_id: r.track_id,
            class_id: r.class,
            score: r.score,
            masks,
        });
    }
    Ok(videos)
}

pub fn save(records: &[TrackRecord], path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec(records).expect("predictions serialize");
    json.push(b'\n');
    write(path, &json)
}

pub fn load(path: &Path) -> Result<Vec<TrackRecord>> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub per_class: Vec<ClassFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFile {
    pub class: usize,
    pub num_gt: usize,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

impl From<&EvalReport> for ReportFile {
    fn from(r: &EvalReport) -> Self {
        Self {
            ap: r.ap,
            ap50: r.ap50,
            ap75: r.ap75,
            ar1: r.ar1,
            ar10: r.ar10,
            per_class: r.per_class.iter().map(ClassFile::from).collect(),
        }
    }
}

impl From<&ClassReport> for ClassFile {
    fn from(c: &ClassReport) -> Self {
        Self {
            class: c.class_id,
            num_gt: c.num_gt,
            ap: c.ap,
            ap50: c.ap50,
            ap75: c.ap75,
        }
    }
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(&ReportFile::from(report)).expect("report serializes");
    json.push(b'\n');
    write(path, &json)
}
