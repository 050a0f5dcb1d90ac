//! Content-based shot segmentation.
//!
//! Adjacent frames are compared in HSV space; a jump in the mean channel
//! difference above `cut_threshold` starts a new scene. Each scene is then
//! trimmed at both ends and kept only if its trimmed duration is within
//! `keep_duration_s`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{FramePack, IngestError, PixelFormat};
use crate::manifest::{ClipRecord, MediaItem, MetricVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub cut_threshold: f64,
    pub min_scene_len: u64,
    pub trim_frames: u64,
    pub keep_duration_s: [f64; 2],
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig { cut_threshold: 27.0, min_scene_len: 15, trim_frames: 10, keep_duration_s: [2.0, 16.0] }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cut_threshold.is_finite() && self.cut_threshold > 0.0) {
            return Err("segmenter.cut_threshold must be > 0".into());
        }
        if self.min_scene_len < 1 {
            return Err("segmenter.min_scene_len must be >= 1".into());
        }
        let [lo, hi] = self.keep_duration_s;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err("segmenter.keep_duration_s must be a non-empty interval".into());
        }
        Ok(())
    }
}

/// Frame indices where a new scene starts, strictly increasing, never 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutList {
    pub cuts: Vec<u64>,
}

/// HSV of one RGB pixel, every channel scaled to [0, 255].
fn hsv(r: u8, g: u8, b: u8) -> [f64; 3] {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max * 255.0 };
    [h / 360.0 * 255.0, s, max]
}

fn frame_hsv(frame: &[u8]) -> Vec<[f64; 3]> {
    frame.chunks_exact(3).map(|p| hsv(p[0], p[1], p[2])).collect()
}

/// Mean of `(|dH| + |dS| + |dV|) / 3` between each pair of adjacent frames.
pub fn content_curve(pack: &FramePack) -> Result<Vec<f64>, IngestError> {
    if pack.frame_count() < 2 {
        return Err(IngestError::InvalidPack("content curve needs at least 2 frames".into()));
    }
    if pack.pixel_format != PixelFormat::Rgb8 {
        return Err(IngestError::InvalidPack("content curve needs RGB8 frames".into()));
    }
    let n = pack.pixels() as f64;
    let mut prev = frame_hsv(pack.frame(0));
    let mut curve = Vec::with_capacity(pack.frame_count() - 1);
    for i in 1..pack.frame_count() {
        let cur = frame_hsv(pack.frame(i));
        let sum: f64 = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0)
            .sum();
        curve.push(sum / n);
        prev = cur;
    }
    Ok(curve)
}

/// Scans the curve once, left to right. A change above the threshold at
/// `curve[i]` starts a scene at `i + 1`, unless the last accepted cut is
/// fewer than `min_scene_len` frames back.
pub fn detect_cuts(curve: &[f64], config: &SegmenterConfig) -> CutList {
    let mut cuts = Vec::new();
    let mut last: Option<u64> = None;
    for (i, &v) in curve.iter().enumerate() {
        let at = i as u64 + 1;
        if v > config.cut_threshold && last.is_none_or(|p| at - p >= config.min_scene_len) {
            cuts.push(at);
            last = Some(at);
        }
    }
    CutList { cuts }
}

/// A scene before and after trimming.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePlan {
    pub index: usize,
    pub span: [u64; 2],
    /// `None` when trimming leaves no frames.
    pub trimmed: Option<[u64; 2]>,
    pub duration_s: f64,
    pub kept: bool,
}

/// Splits `[0, frame_count)` at `cuts`, trims each scene and applies the
/// closed duration window.
pub fn plan_scenes(frame_count: u64, fps: f64, cuts: &CutList, config: &SegmenterConfig) -> Vec<ScenePlan> {
    let mut bounds = Vec::with_capacity(cuts.cuts.len() + 2);
    bounds.push(0);
    bounds.extend(cuts.cuts.iter().copied().filter(|&c| c > 0 && c < frame_count));
    bounds.push(frame_count);
    bounds.dedup();
    let [lo, hi] = config.keep_duration_s;
    bounds
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            let (s, e) = (w[0], w[1]);
            let trim = config.trim_frames;
            let trimmed = (e.saturating_sub(trim) > s + trim).then(|| [s + trim, e - trim]);
            let duration_s = trimmed.map_or(0.0, |[a, b]| (b - a) as f64 / fps);
            let kept = trimmed.is_some() && lo <= duration_s && duration_s <= hi;
            ScenePlan { index, span: [s, e], trimmed, duration_s, kept }
        })
        .collect()
}

/// Id given to scene `index` of `parent_id`.
pub fn clip_id(parent_id: &str, index: usize) -> String {
    format!("{parent_id}-scene{index:03}")
}

/// Clip record for one kept scene. Clips inherit the parent's geometry and
/// are re-timed to `clip_fps`.
pub fn clip_from_scene(parent: &MediaItem, plan: &ScenePlan, clip_fps: f64) -> Option<ClipRecord> {
    let span = plan.trimmed?;
    let source_fps = parent.fps?;
    Some(ClipRecord {
        id: clip_id(&parent.id, plan.index),
        parent_id: parent.id.clone(),
        span,
        fps: clip_fps,
        source_fps,
        duration_s: (span[1] - span[0]) as f64 / source_fps,
        width: parent.width,
        height: parent.height,
        source_width: parent.width,
        source_height: parent.height,
        crop: None,
        path: None,
        source: if parent.source.is_empty() { parent.id.clone() } else { parent.source.clone() },
        metrics: MetricVector::default(),
        captions: None,
        decisions: Vec::new(),
        extra: BTreeMap::new(),
    })
}

/// Kept scenes of `parent` as clip records, in time order.
pub fn extract_clips(parent: &MediaItem, cuts: &CutList, config: &SegmenterConfig) -> Vec<ClipRecord> {
    let (Some(frames), Some(fps)) = (parent.frame_count, parent.fps) else {
        return Vec::new();
    };
    plan_scenes(frames, fps, cuts, config)
        .iter()
        .filter(|p| p.kept)
        .filter_map(|p| clip_from_scene(parent, p, fps))
        .collect()
}
