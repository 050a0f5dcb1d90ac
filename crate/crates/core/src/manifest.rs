//! Canonical record types and JSONL persistence.
//!
//! A manifest is a JSONL file holding one [`Record`] per line. Records are
//! either source assets ([`MediaItem`]) or single-scene clips cut from a
//! source video ([`ClipRecord`]); a line is a clip exactly when it carries a
//! `parent_id` field. Fields this crate does not know about are kept in an
//! `extra` map and written back untouched.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::ErrorClass;
use crate::numfmt;

/// Relative tolerance for `duration_s` consistency checks.
pub const DURATION_REL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Json { path: PathBuf, line: usize, message: String },
    #[error("{path}: duplicate id {id:?} on lines {first} and {second}")]
    DuplicateId { path: PathBuf, id: String, first: usize, second: usize },
    #[error("invalid record {id:?}: {}", format_violations(.violations))]
    Invalid { id: String, violations: Vec<Violation> },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl ManifestError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ManifestError::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Video,
}

impl std::fmt::Display for MediaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
        })
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.w)
    }

    pub fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.h)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        u64::from(self.x) < other.right()
            && u64::from(other.x) < self.right()
            && u64::from(self.y) < other.bottom()
            && u64::from(other.y) < self.bottom()
    }
}

/// Scores attached to a record. Every field is absent until measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brightness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dover: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unimatch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_area_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watermark_area_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_sim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_proxy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_proxy: Option<f64>,
}

impl MetricVector {
    pub const KEYS: [&'static str; 10] = [
        "brightness",
        "dover",
        "lpips",
        "unimatch",
        "aesthetic",
        "text_area_pct",
        "watermark_area_pct",
        "clip_sim",
        "motion_proxy",
        "consistency_proxy",
    ];

    pub fn is_empty(&self) -> bool {
        *self == MetricVector::default()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "brightness" => self.brightness,
            "dover" => self.dover,
            "lpips" => self.lpips,
            "unimatch" => self.unimatch,
            "aesthetic" => self.aesthetic,
            "text_area_pct" => self.text_area_pct,
            "watermark_area_pct" => self.watermark_area_pct,
            "clip_sim" => self.clip_sim,
            "motion_proxy" => self.motion_proxy,
            "consistency_proxy" => self.consistency_proxy,
            _ => None,
        }
    }

    pub fn slot_mut(&mut self, key: &str) -> Option<&mut Option<f64>> {
        Some(match key {
            "brightness" => &mut self.brightness,
            "dover" => &mut self.dover,
            "lpips" => &mut self.lpips,
            "unimatch" => &mut self.unimatch,
            "aesthetic" => &mut self.aesthetic,
            "text_area_pct" => &mut self.text_area_pct,
            "watermark_area_pct" => &mut self.watermark_area_pct,
            "clip_sim" => &mut self.clip_sim,
            "motion_proxy" => &mut self.motion_proxy,
            "consistency_proxy" => &mut self.consistency_proxy,
            _ => return None,
        })
    }

    /// Text plus watermark coverage, in percent of the frame. `None` when the
    /// text area has not been measured; a missing watermark area counts as 0.
    pub fn artifact_area_pct(&self) -> Option<f64> {
        self.text_area_pct.map(|t| t + self.watermark_area_pct.unwrap_or(0.0))
    }

    /// Declared value range per key; `None` means any finite value.
    pub fn range(key: &str) -> Option<(f64, f64)> {
        match key {
            "brightness" => Some((0.0, 255.0)),
            "text_area_pct" | "watermark_area_pct" => Some((0.0, 100.0)),
            "clip_sim" => Some((-1.0, 1.0)),
            "motion_proxy" => Some((0.0, f64::INFINITY)),
            "consistency_proxy" => Some((0.0, 1.0)),
            _ => None,
        }
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        for key in Self::KEYS {
            let Some(v) = self.get(key) else { continue };
            let field = format!("metrics.{key}");
            if !v.is_finite() {
                out.push(Violation::new(field, "must be finite"));
            } else if let Some((lo, hi)) = Self::range(key) {
                if v < lo || v > hi {
                    out.push(Violation::new(field, format!("must lie in [{lo}, {hi}]")));
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseCaption {
    #[serde(default)]
    pub tags: Vec<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub coarse: CoarseCaption,
    pub fine: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mid_frame_coarse: Option<CoarseCaption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mid_frame_fine: Option<String>,
    #[serde(default)]
    pub camera_motions: Vec<String>,
}

/// A source image or video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediaItem {
    pub id: String,
    pub kind: MediaKind,
    pub path: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "MetricVector::is_empty")]
    pub metrics: MetricVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<CaptionSet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decisions: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl MediaItem {
    pub fn video(id: impl Into<String>, path: impl Into<String>, width: u32, height: u32, fps: f64, frame_count: u64) -> Self {
        MediaItem {
            id: id.into(),
            kind: MediaKind::Video,
            path: path.into(),
            width,
            height,
            fps: Some(fps),
            frame_count: Some(frame_count),
            duration_s: Some(frame_count as f64 / fps),
            source: String::new(),
            metrics: MetricVector::default(),
            captions: None,
            decisions: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn image(id: impl Into<String>, path: impl Into<String>, width: u32, height: u32) -> Self {
        MediaItem {
            id: id.into(),
            kind: MediaKind::Image,
            path: path.into(),
            width,
            height,
            fps: None,
            frame_count: None,
            duration_s: None,
            source: String::new(),
            metrics: MetricVector::default(),
            captions: None,
            decisions: Vec::new(),
            extra: BTreeMap::new(),
        }
    }
}

/// A single-scene clip cut out of a source video.
///
/// `span` is `[start_frame, end_frame)` in parent frames, counted at
/// `source_fps`. `width`/`height` describe the clip after any crop; `crop`
/// is expressed in parent pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub parent_id: String,
    pub span: [u64; 2],
    pub fps: f64,
    pub source_fps: f64,
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
    pub source_width: u32,
    pub source_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<Rect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "MetricVector::is_empty")]
    pub metrics: MetricVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<CaptionSet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decisions: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ClipRecord {
    pub fn frame_len(&self) -> u64 {
        self.span[1].saturating_sub(self.span[0])
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Item(MediaItem),
    Clip(ClipRecord),
}

impl From<MediaItem> for Record {
    fn from(m: MediaItem) -> Self {
        Record::Item(m)
    }
}

impl From<ClipRecord> for Record {
    fn from(c: ClipRecord) -> Self {
        Record::Clip(c)
    }
}

impl Record {
    pub fn id(&self) -> &str {
        match self {
            Record::Item(m) => &m.id,
            Record::Clip(c) => &c.id,
        }
    }

    pub fn kind(&self) -> MediaKind {
        match self {
            Record::Item(m) => m.kind,
            Record::Clip(_) => MediaKind::Video,
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            Record::Item(m) => m.width,
            Record::Clip(c) => c.width,
        }
    }

    pub fn height(&self) -> u32 {
        match self {
            Record::Item(m) => m.height,
            Record::Clip(c) => c.height,
        }
    }

    pub fn fps(&self) -> Option<f64> {
        match self {
            Record::Item(m) => m.fps,
            Record::Clip(c) => Some(c.fps),
        }
    }

    pub fn duration_s(&self) -> Option<f64> {
        match self {
            Record::Item(m) => m.duration_s,
            Record::Clip(c) => Some(c.duration_s),
        }
    }

    /// FramePack holding this record's frames, when known.
    pub fn path(&self) -> Option<&str> {
        match self {
            Record::Item(m) => Some(&m.path),
            Record::Clip(c) => c.path.as_deref(),
        }
    }

    pub fn metrics(&self) -> &MetricVector {
        match self {
            Record::Item(m) => &m.metrics,
            Record::Clip(c) => &c.metrics,
        }
    }

    pub fn metrics_mut(&mut self) -> &mut MetricVector {
        match self {
            Record::Item(m) => &mut m.metrics,
            Record::Clip(c) => &mut c.metrics,
        }
    }

    pub fn captions(&self) -> Option<&CaptionSet> {
        match self {
            Record::Item(m) => m.captions.as_ref(),
            Record::Clip(c) => c.captions.as_ref(),
        }
    }

    pub fn set_captions(&mut self, captions: CaptionSet) {
        match self {
            Record::Item(m) => m.captions = Some(captions),
            Record::Clip(c) => c.captions = Some(captions),
        }
    }

    pub fn decisions_mut(&mut self) -> &mut Vec<String> {
        match self {
            Record::Item(m) => &mut m.decisions,
            Record::Clip(c) => &mut c.decisions,
        }
    }

    pub fn extra(&self) -> &BTreeMap<String, Value> {
        match self {
            Record::Item(m) => &m.extra,
            Record::Clip(c) => &c.extra,
        }
    }

    /// True for a source video that still needs scene segmentation.
    pub fn is_raw_video(&self) -> bool {
        matches!(self, Record::Item(m) if m.kind == MediaKind::Video)
    }

    /// One JSON object, canonical key order, known floats rounded to nine
    /// significant digits, unknown fields written back verbatim.
    pub fn to_json_line(&self) -> Result<String, serde_json::Error> {
        let mut stripped = self.clone();
        let extra = match &mut stripped {
            Record::Item(m) => std::mem::take(&mut m.extra),
            Record::Clip(c) => std::mem::take(&mut c.extra),
        };
        let mut v = match &stripped {
            Record::Item(m) => serde_json::to_value(m)?,
            Record::Clip(c) => serde_json::to_value(c)?,
        };
        numfmt::round_json(&mut v);
        if let Value::Object(map) = &mut v {
            for (k, val) in extra {
                map.entry(k).or_insert(val);
            }
        }
        serde_json::to_string(&v)
    }

    pub fn from_json_value(v: Value) -> Result<Self, serde_json::Error> {
        if v.get("parent_id").is_some() {
            serde_json::from_value(v).map(Record::Clip)
        } else {
            serde_json::from_value(v).map(Record::Item)
        }
    }
}

impl Serialize for Record {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Record::Item(m) => m.serialize(s),
            Record::Clip(c) => c.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Record {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Record::from_json_value(v).map_err(serde::de::Error::custom)
    }
}

/// Filter step an audit entry belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    DurationResolution,
    SceneSegmentation,
    LowLevelMetrics,
    Aesthetics,
    Artifacts,
    CoarseCaptioning,
    ClipSimilarity,
    Stratification,
    ScorerError,
}

impl Step {
    pub fn as_str(&self) -> &'static str {
        match self {
            Step::DurationResolution => "duration_resolution",
            Step::SceneSegmentation => "scene_segmentation",
            Step::LowLevelMetrics => "low_level_metrics",
            Step::Aesthetics => "aesthetics",
            Step::Artifacts => "artifacts",
            Step::CoarseCaptioning => "coarse_captioning",
            Step::ClipSimilarity => "clip_similarity",
            Step::Stratification => "stratification",
            Step::ScorerError => "scorer_error",
        }
    }
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A bound a measured value is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Threshold {
    AtLeast { min: f64 },
    AtMost { max: f64 },
    Closed { lo: f64, hi: f64 },
    Open { lo: f64, hi: f64 },
}

impl Threshold {
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Threshold::AtLeast { min } => v >= min,
            Threshold::AtMost { max } => v <= max,
            Threshold::Closed { lo, hi } => lo <= v && v <= hi,
            Threshold::Open { lo, hi } => lo < v && v < hi,
        }
    }
}

/// Audit entry for one check of one item.
///
/// For entries that were evaluated (`skipped == false`), `passed` equals
/// `threshold.admits(value)`; a missing value or threshold never passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub id: String,
    pub item_id: String,
    pub step: Step,
    pub metric_key: String,
    pub value: Option<f64>,
    pub threshold: Option<Threshold>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DecisionRecord {
    /// An evaluated check; `passed` is derived from the value and bound.
    pub fn evaluated(item_id: &str, step: Step, metric_key: &str, value: Option<f64>, threshold: Threshold, stage: &str) -> Self {
        let passed = value.is_some_and(|v| threshold.admits(v));
        DecisionRecord {
            id: String::new(),
            item_id: item_id.to_string(),
            step,
            metric_key: metric_key.to_string(),
            value,
            threshold: Some(threshold),
            passed,
            skipped: false,
            stage: stage.to_string(),
            note: None,
        }
    }

    pub fn skipped(item_id: &str, step: Step, metric_key: &str, threshold: Option<Threshold>, stage: &str) -> Self {
        DecisionRecord {
            id: String::new(),
            item_id: item_id.to_string(),
            step,
            metric_key: metric_key.to_string(),
            value: None,
            threshold,
            passed: false,
            skipped: true,
            stage: stage.to_string(),
            note: None,
        }
    }

    /// A failure that has no numeric value behind it.
    pub fn failure(item_id: &str, step: Step, metric_key: &str, stage: &str, note: impl Into<String>) -> Self {
        DecisionRecord {
            id: String::new(),
            item_id: item_id.to_string(),
            step,
            metric_key: metric_key.to_string(),
            value: None,
            threshold: None,
            passed: false,
            skipped: false,
            stage: stage.to_string(),
            note: Some(note.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Re-derives `passed` from the stored value and threshold.
    pub fn is_consistent(&self) -> bool {
        if self.skipped {
            return !self.passed;
        }
        let expect = match (self.value, self.threshold) {
            (Some(v), Some(t)) => t.admits(v),
            _ => false,
        };
        expect == self.passed
    }
}

/// A broken invariant: which field and what rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation { field: field.into(), rule: rule.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.field, self.rule)
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Checks every per-record invariant. Empty means valid.
pub fn validate_record(record: &Record) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.id().is_empty() {
        out.push(Violation::new("id", "must be non-empty"));
    }
    match record {
        Record::Item(m) => {
            if m.width < 1 {
                out.push(Violation::new("width", "must be >= 1"));
            }
            if m.height < 1 {
                out.push(Violation::new("height", "must be >= 1"));
            }
            if m.kind == MediaKind::Video {
                match m.fps {
                    Some(f) if f.is_finite() && f > 0.0 => {}
                    Some(_) => out.push(Violation::new("fps", "must be > 0")),
                    None => out.push(Violation::new("fps", "is required for videos")),
                }
                match m.frame_count {
                    Some(n) if n >= 1 => {}
                    Some(_) => out.push(Violation::new("frame_count", "must be >= 1")),
                    None => out.push(Violation::new("frame_count", "is required for videos")),
                }
                match (m.duration_s, m.fps, m.frame_count) {
                    (None, _, _) => out.push(Violation::new("duration_s", "is required for videos")),
                    (Some(d), Some(f), Some(n)) if f > 0.0 => {
                        if !rel_close(d, n as f64 / f, DURATION_REL_TOL) {
                            out.push(Violation::new("duration_s", "must equal frame_count/fps within 1e-6 relative"));
                        }
                    }
                    _ => {}
                }
            }
            if let Some(c) = &m.captions {
                if m.kind == MediaKind::Image && (c.mid_frame_coarse.is_some() || c.mid_frame_fine.is_some()) {
                    out.push(Violation::new("captions", "images carry only coarse and fine captions"));
                }
            }
            m.metrics.violations(&mut out);
        }
        Record::Clip(c) => {
            if c.parent_id.is_empty() {
                out.push(Violation::new("parent_id", "must be non-empty"));
            }
            if c.span[0] >= c.span[1] {
                out.push(Violation::new("span", "start_frame must be < end_frame"));
            }
            if !(c.fps.is_finite() && c.fps > 0.0) {
                out.push(Violation::new("fps", "must be > 0"));
            }
            if !(c.source_fps.is_finite() && c.source_fps > 0.0) {
                out.push(Violation::new("source_fps", "must be > 0"));
            } else if c.span[0] < c.span[1] && !rel_close(c.duration_s, c.frame_len() as f64 / c.source_fps, DURATION_REL_TOL) {
                out.push(Violation::new("duration_s", "must equal (end_frame - start_frame)/source_fps within 1e-6 relative"));
            }
            if c.width < 1 {
                out.push(Violation::new("width", "must be >= 1"));
            }
            if c.height < 1 {
                out.push(Violation::new("height", "must be >= 1"));
            }
            if let Some(r) = c.crop {
                let frame = Rect { x: 0, y: 0, w: c.source_width, h: c.source_height };
                if r.w == 0 || r.h == 0 || !frame.contains_rect(&r) {
                    out.push(Violation::new("crop", "must be a non-empty rectangle inside the parent frame"));
                }
                if r.w != c.width || r.h != c.height {
                    out.push(Violation::new("crop", "must match the clip width and height"));
                }
            }
            c.metrics.violations(&mut out);
        }
    }
    out
}

/// Validates a whole batch, including id uniqueness.
pub fn validate_all(records: &[Record]) -> Result<(), ManifestError> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let violations = validate_record(r);
        if !violations.is_empty() {
            return Err(ManifestError::Invalid { id: r.id().to_string(), violations });
        }
        if let Some(first) = seen.insert(r.id(), i + 1) {
            return Err(ManifestError::Invalid {
                id: r.id().to_string(),
                violations: vec![Violation::new("id", format!("duplicates record {first}"))],
            });
        }
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.to_path_buf(), source }
}

/// Writes `records` as JSONL in input order. Nothing is written unless every
/// record is valid.
pub fn write_manifest(records: &[Record], path: &Path) -> Result<usize, ManifestError> {
    validate_all(records)?;
    let lines = records.iter().map(Record::to_json_line).collect::<Result<Vec<_>, _>>()?;
    write_lines(&lines, path)?;
    Ok(records.len())
}

/// Reads a manifest in file order. Blank lines are ignored.
pub fn load_manifest(path: &Path) -> Result<Vec<Record>, ManifestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let json_err = |e: serde_json::Error| ManifestError::Json {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        };
        let value: Value = serde_json::from_str(&line).map_err(json_err)?;
        let record = Record::from_json_value(value).map_err(json_err)?;
        if let Some(first) = seen.get(record.id()) {
            return Err(ManifestError::DuplicateId {
                path: path.to_path_buf(),
                id: record.id().to_string(),
                first: *first,
                second: lineno,
            });
        }
        seen.insert(record.id().to_string(), lineno);
        records.push(record);
    }
    Ok(records)
}

/// Writes any serializable rows as canonical JSONL.
pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<usize, ManifestError> {
    let lines = rows.iter().map(numfmt::canonical_json).collect::<Result<Vec<_>, _>>()?;
    write_lines(&lines, path)?;
    Ok(rows.len())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| ManifestError::Json {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

pub fn write_decisions(decisions: &[DecisionRecord], path: &Path) -> Result<usize, ManifestError> {
    write_jsonl(decisions, path)
}

pub fn load_decisions(path: &Path) -> Result<Vec<DecisionRecord>, ManifestError> {
    read_jsonl(path)
}

fn write_lines(lines: &[String], path: &Path) -> Result<(), ManifestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: &str, span: [u64; 2]) -> ClipRecord {
        ClipRecord {
            id: id.into(),
            parent_id: "v1".into(),
            span,
            fps: 30.0,
            source_fps: 30.0,
            duration_s: span[1].saturating_sub(span[0]) as f64 / 30.0,
            width: 1280,
            height: 720,
            source_width: 1280,
            source_height: 720,
            crop: None,
            path: None,
            source: "test".into(),
            metrics: MetricVector::default(),
            captions: None,
            decisions: vec![],
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn valid_video_has_no_violations() {
        let v = MediaItem::video("v1", "a.fpk", 1280, 720, 30.0, 300);
        assert!(validate_record(&v.into()).is_empty());
    }

    #[test]
    fn inconsistent_duration_is_one_violation() {
        let mut v = MediaItem::video("v1", "a.fpk", 1280, 720, 30.0, 300);
        v.duration_s = Some(10.0 * (1.0 + 2e-6));
        let violations = validate_record(&v.into());
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "duration_s");
    }

    #[test]
    fn out_of_range_clip_sim_is_one_violation() {
        let mut c = clip("c1", [0, 90]);
        c.metrics.clip_sim = Some(1.5);
        let violations = validate_record(&c.into());
        assert_eq!(violations, vec![Violation::new("metrics.clip_sim", "must lie in [-1, 1]")]);
    }

    #[test]
    fn empty_span_names_the_invariant() {
        let c = clip("c1", [90, 90]);
        let dir = tempfile::tempdir().unwrap();
        let err = write_manifest(&[c.into()], &dir.path().join("m.jsonl")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("span") && msg.contains("start_frame must be < end_frame"), "{msg}");
        assert!(!dir.path().join("m.jsonl").exists());
    }

    #[test]
    fn crop_must_fit_parent() {
        let mut c = clip("c1", [0, 90]);
        c.crop = Some(Rect { x: 128, y: 72, w: 1200, h: 576 });
        c.width = 1200;
        c.height = 576;
        assert_eq!(validate_record(&c.into()).len(), 1);
    }

    #[test]
    fn image_with_mid_frame_caption_is_invalid() {
        let mut m = MediaItem::image("i1", "i.fpk", 800, 600);
        m.captions = Some(CaptionSet {
            coarse: CoarseCaption { tags: vec![], text: "x".into() },
            fine: "y".into(),
            mid_frame_coarse: None,
            mid_frame_fine: Some("z".into()),
            camera_motions: vec![],
        });
        assert_eq!(validate_record(&m.into()).len(), 1);
    }

    #[test]
    fn empty_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        assert_eq!(write_manifest(&[], &p).unwrap(), 0);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 0);
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_cite_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let line = |id: &str| MediaItem::image(id, "x.fpk", 10, 10).into();
        let recs: Vec<Record> = vec![line("a"), line("b"), line("c"), line("d")];
        write_manifest(&recs, &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str(&Record::from(MediaItem::image("b", "y.fpk", 10, 10)).to_json_line().unwrap());
        text.push('\n');
        std::fs::write(&p, text).unwrap();
        match load_manifest(&p).unwrap_err() {
            ManifestError::DuplicateId { id, first, second, .. } => {
                assert_eq!((id.as_str(), first, second), ("b", 2, 5));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let good = Record::from(MediaItem::image("a", "x.fpk", 10, 10)).to_json_line().unwrap();
        std::fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        match load_manifest(&p).unwrap_err() {
            ManifestError::Json { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_fields_survive() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let line = r#"{"id":"a","kind":"image","path":"a.png","width":10,"height":12,"vendor":{"score":0.123456789123,"tags":["x"]}}"#;
        std::fs::write(&p, format!("{line}\n")).unwrap();
        let recs = load_manifest(&p).unwrap();
        assert_eq!(recs[0].extra()["vendor"]["tags"][0], "x");
        let out = dir.path().join("out.jsonl");
        write_manifest(&recs, &out).unwrap();
        let back = load_manifest(&out).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn clip_lines_are_detected_by_parent_id() {
        let c: Record = clip("c1", [10, 290]).into();
        let line = c.to_json_line().unwrap();
        let back: Record = serde_json::from_str(&line).unwrap();
        assert!(matches!(back, Record::Clip(_)));
    }

    #[test]
    fn decision_consistency() {
        let d = DecisionRecord::evaluated("a", Step::LowLevelMetrics, "brightness", Some(190.0), Threshold::Closed { lo: 20.0, hi: 180.0 }, "t2v_finetune");
        assert!(!d.passed);
        assert!(d.is_consistent());
        let mut forged = d.clone();
        forged.passed = true;
        assert!(!forged.is_consistent());
        assert!(Threshold::Open { lo: 23.0, hi: 61.0 }.admits(30.0));
        assert!(!Threshold::Open { lo: 23.0, hi: 61.0 }.admits(23.0));
    }
}
