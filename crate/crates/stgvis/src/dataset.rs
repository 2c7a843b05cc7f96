//! On-disk datasets: `video_####/frame_####.ppm` plus one
//! `video_####/annotations.json` per video.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stgvis_core::geometry::BBox;
use stgvis_core::metrics::MaskRle;
use stgvis_core::synth::{Annotation, Frame, Video, VideoDataset};

use crate::error::{read, write, Error, Result};
use crate::ppm::{self, Image};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoFile {
    height: usize,
    width: usize,
    frames: Vec<FrameFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    instances: Vec<InstanceFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    id: u64,
    class: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    mask: String,
}

pub fn video_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("video_{index:04}"))
}

pub fn frame_path(root: &Path, video: usize, frame: usize) -> PathBuf {
    video_dir(root, video).join(format!("frame_{frame:04}.ppm"))
}

pub fn write_video(root: &Path, index: usize, video: &Video) -> Result<()> {
    let mut frames = Vec::with_capacity(video.frames.len());
    for (t, f) in video.frames.iter().enumerate() {
        let img = Image {
            width: video.width,
            height: video.height,
            rgb: f.rgb.clone(),
        };
        ppm::save(&img, &frame_path(root, index, t))?;
        let instances = f
            .instances
            .iter()
            .map(|a| {
                Ok(InstanceFile {
                    id: a.id,
                    class: a.class_id,
                    bbox: a.bbox.to_array(),
                    mask: MaskRle::encode(&a.mask, video.height, video.width)?.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        frames.push(FrameFile { instances });
    }
    let file = VideoFile {
        height: video.height,
        width: video.width,
        frames,
    };
    let json = serde_json::to_vec_pretty(&file).expect("annotations serialize");
    write(&video_dir(root, index).join("annotations.json"), &json)
}

pub fn write_dataset(root: &Path, dataset: &VideoDataset) -> Result<()> {
    for (i, v) in dataset.videos.iter().enumerate() {
        write_video(root, i, v)?;
    }
    Ok(())
}

pub fn read_video(root: &Path, index: usize) -> Result<Video> {
    let path = video_dir(root, index).join("annotations.json");
    if !path.is_file() {
        return Err(Error::format(&path, 0, format!("missing annotations for video {index}")));
    }
    let file: VideoFile = serde_json::from_slice(&read(&path)?).map_err(|e| Error::json(&path, e))?;
    let mut frames = Vec::with_capacity(file.frames.len());
    for (t, ff) in file.frames.into_iter().enumerate() {
        let fp = frame_path(root, index, t);
        let img = ppm::load(&fp)?;
        if img.width != file.width || img.height != file.height {
            return Err(Error::format(&fp, 0, format!("frame is {}x{}, annotations say {}x{}", img.width, img.height, file.width, file.height)));
        }
        let mut instances = Vec::with_capacity(ff.instances.len());
        for (j, inst) in ff.instances.into_iter().enumerate() {
            let at = format!("frames[{t}].instances[{j}]");
            let rle: MaskRle = inst.mask.parse().map_err(|e| Error::format(&path, &at, e))?;
            if rle.height != file.height || rle.width != file.width {
                return Err(Error::format(&path, &at, "mask size differs from video size"));
            }
            let [x1, y1, x2, y2] = inst.bbox;
            instances.push(Annotation {
                id: inst.id,
                class_id: inst.class,
                bbox: BBox::new(x1, y1, x2, y2),
                mask: rle.decode()?,
            });
        }
        frames.push(Frame { rgb: img.rgb, instances });
    }
    Ok(Video {
        height: file.height,
        width: file.width,
        frames,
    })
}

/// Reads `video_0000`, `video_0001`, ... until the first missing index.
pub fn read_dataset(root: &Path) -> Result<VideoDataset> {
    if !root.is_dir() {
        return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    let mut videos = Vec::new();
    while video_dir(root, videos.len()).is_dir() {
        videos.push(read_video(root, videos.len())?);
    }
    if videos.is_empty() {
        return Err(Error::format(root, 0, "dataset contains no videos"));
    }
    Ok(VideoDataset { videos })
}
