//! The staged filtering funnel.
//!
//! For one training stage every record runs, in order:
//!
//! 1. duration / fps / resolution prefilter,
//! 2. scene segmentation (raw videos only; the clips re-enter at step 1),
//! 3. brightness, clarity, consistency and motion checks,
//! 4. aesthetics,
//! 5. the text/watermark artifact gate,
//! 6. coarse captioning and the caption/frame similarity gate,
//! 7. fine captioning of the survivors.
//!
//! The first failed check drops the item; later checks are logged as
//! skipped and never cost a scorer request. Metric values already on a
//! record are reused. Records are processed in parallel and collected in id
//! order, so outputs do not depend on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::annotate::{assemble_caption_set, build_fine_instruction};
use crate::error::ErrorClass;
use crate::exec::Executor;
use crate::ingest::{self, FramePack, IngestError, DEFAULT_DECODE_TEMPLATE};
use crate::manifest::{
    self, CaptionSet, CoarseCaption, DecisionRecord, ManifestError, MediaItem, MediaKind, Record, Rect, Step, Threshold,
};
use crate::metrics::{self, Embedding};
use crate::scenedetect::{self, SegmenterConfig};
use crate::scorers::{ScoreRequest, ScoreResponse, Scorer, ScorerError, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "t2i_pretrain")]
    T2iPretrain,
    #[serde(rename = "t2v_pretrain_360p")]
    T2vPretrain360p,
    #[serde(rename = "t2v_pretrain_720p")]
    T2vPretrain720p,
    #[serde(rename = "t2v_finetune")]
    T2vFinetune,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::T2iPretrain, Stage::T2vPretrain360p, Stage::T2vPretrain720p, Stage::T2vFinetune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::T2iPretrain => "t2i_pretrain",
            Stage::T2vPretrain360p => "t2v_pretrain_360p",
            Stage::T2vPretrain720p => "t2v_pretrain_720p",
            Stage::T2vFinetune => "t2v_finetune",
        }
    }

    /// The only media kind admitted at this stage.
    pub fn kind(self) -> MediaKind {
        match self {
            Stage::T2iPretrain => MediaKind::Image,
            _ => MediaKind::Video,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}; expected one of t2i_pretrain, t2v_pretrain_360p, t2v_pretrain_720p, t2v_finetune"))
    }
}

/// `[lo, hi]` on disk; whether the ends are inclusive depends on the field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn closed(self) -> Threshold {
        Threshold::Closed { lo: self.lo, hi: self.hi }
    }

    pub fn open(self) -> Threshold {
        Threshold::Open { lo: self.lo, hi: self.hi }
    }

    fn is_valid(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Interval { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// One column of the threshold table. `None` means the stage does not
/// apply that check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageThresholds {
    pub stage: Stage,
    /// Seconds, inclusive.
    pub duration_s: Option<Interval>,
    /// Frames per second, exclusive.
    pub fps: Option<Interval>,
    pub min_width: u32,
    pub min_height: u32,
    /// Mean grayscale, inclusive.
    pub brightness: Interval,
    pub dover_min: Option<f64>,
    pub lpips_min: Option<f64>,
    /// Inclusive.
    pub unimatch: Option<Interval>,
    pub aesthetic_min: f64,
    /// Combined text + watermark coverage, percent of the frame.
    pub text_area_pct_max: f64,
    pub clip_sim_min: f64,
}

/// A single threshold test, in funnel order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Check {
    pub step: Step,
    pub key: &'static str,
    pub threshold: Threshold,
}

pub const ARTIFACT_KEY: &str = "artifact_area_pct";

impl StageThresholds {
    /// The default column for `stage`.
    pub fn defaults(stage: Stage) -> Self {
        let video = stage != Stage::T2iPretrain;
        let finetune = stage == Stage::T2vFinetune;
        let (min_width, min_height) = match stage {
            Stage::T2iPretrain | Stage::T2vPretrain360p => (640, 368),
            _ => (1280, 720),
        };
        StageThresholds {
            stage,
            duration_s: match stage {
                Stage::T2iPretrain => None,
                Stage::T2vFinetune => Some(Interval::new(6.0, 16.0)),
                _ => Some(Interval::new(2.0, 16.0)),
            },
            fps: video.then_some(Interval::new(23.0, 61.0)),
            min_width,
            min_height,
            brightness: Interval::new(20.0, 180.0),
            dover_min: finetune.then_some(0.07),
            lpips_min: finetune.then_some(0.05),
            unimatch: finetune.then_some(Interval::new(1.0, 100.0)),
            aesthetic_min: match stage {
                Stage::T2iPretrain | Stage::T2vPretrain360p => 4.8,
                Stage::T2vPretrain720p => 5.0,
                Stage::T2vFinetune => 5.3,
            },
            text_area_pct_max: 0.05,
            clip_sim_min: match stage {
                Stage::T2iPretrain | Stage::T2vPretrain360p => 0.17,
                _ => 0.20,
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let name = self.stage.name();
        let finite = |v: f64| v.is_finite();
        let intervals = [("duration_s", self.duration_s), ("fps", self.fps), ("brightness", Some(self.brightness)), ("unimatch", self.unimatch)];
        for (field, iv) in intervals {
            if iv.is_some_and(|i| !i.is_valid()) {
                return Err(format!("stages.{name}.{field} must be a finite, non-empty interval"));
            }
        }
        if self.fps.is_some_and(|i| i.lo >= i.hi) {
            return Err(format!("stages.{name}.fps is an open interval and must have lo < hi"));
        }
        let scalars = [
            ("dover_min", self.dover_min),
            ("lpips_min", self.lpips_min),
            ("aesthetic_min", Some(self.aesthetic_min)),
            ("text_area_pct_max", Some(self.text_area_pct_max)),
            ("clip_sim_min", Some(self.clip_sim_min)),
        ];
        for (field, v) in scalars {
            if v.is_some_and(|v| !finite(v)) {
                return Err(format!("stages.{name}.{field} must be finite"));
            }
        }
        if self.stage == Stage::T2iPretrain && (self.duration_s.is_some() || self.fps.is_some()) {
            return Err(format!("stages.{name}: image stages take no duration or fps bounds"));
        }
        Ok(())
    }

    /// All checks of this column in funnel order.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::with_capacity(11);
        let mut push = |step, key, threshold| out.push(Check { step, key, threshold });
        if let Some(d) = self.duration_s {
            push(Step::DurationResolution, "duration_s", d.closed());
        }
        if let Some(f) = self.fps {
            push(Step::DurationResolution, "fps", f.open());
        }
        push(Step::DurationResolution, "width", Threshold::AtLeast { min: f64::from(self.min_width) });
        push(Step::DurationResolution, "height", Threshold::AtLeast { min: f64::from(self.min_height) });
        push(Step::LowLevelMetrics, "brightness", self.brightness.closed());
        if let Some(v) = self.dover_min {
            push(Step::LowLevelMetrics, "dover", Threshold::AtLeast { min: v });
        }
        if let Some(v) = self.lpips_min {
            push(Step::LowLevelMetrics, "lpips", Threshold::AtLeast { min: v });
        }
        if let Some(v) = self.unimatch {
            push(Step::LowLevelMetrics, "unimatch", v.closed());
        }
        push(Step::Aesthetics, "aesthetic", Threshold::AtLeast { min: self.aesthetic_min });
        push(Step::Artifacts, ARTIFACT_KEY, Threshold::AtMost { max: self.text_area_pct_max });
        push(Step::ClipSimilarity, "clip_sim", Threshold::AtLeast { min: self.clip_sim_min });
        out
    }
}

/// The four columns, keyed by stage name on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSet {
    pub t2i_pretrain: StageThresholds,
    pub t2v_pretrain_360p: StageThresholds,
    pub t2v_pretrain_720p: StageThresholds,
    pub t2v_finetune: StageThresholds,
}

impl Default for StageSet {
    fn default() -> Self {
        StageSet {
            t2i_pretrain: StageThresholds::defaults(Stage::T2iPretrain),
            t2v_pretrain_360p: StageThresholds::defaults(Stage::T2vPretrain360p),
            t2v_pretrain_720p: StageThresholds::defaults(Stage::T2vPretrain720p),
            t2v_finetune: StageThresholds::defaults(Stage::T2vFinetune),
        }
    }
}

impl StageSet {
    pub fn get(&self, stage: Stage) -> &StageThresholds {
        match stage {
            Stage::T2iPretrain => &self.t2i_pretrain,
            Stage::T2vPretrain360p => &self.t2v_pretrain_360p,
            Stage::T2vPretrain720p => &self.t2v_pretrain_720p,
            Stage::T2vFinetune => &self.t2v_finetune,
        }
    }

    pub fn get_mut(&mut self, stage: Stage) -> &mut StageThresholds {
        match stage {
            Stage::T2iPretrain => &mut self.t2i_pretrain,
            Stage::T2vPretrain360p => &mut self.t2v_pretrain_360p,
            Stage::T2vPretrain720p => &mut self.t2v_pretrain_720p,
            Stage::T2vFinetune => &mut self.t2v_finetune,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &StageThresholds> {
        Stage::ALL.into_iter().map(|s| self.get(s))
    }

    pub fn validate(&self) -> Result<(), String> {
        for stage in Stage::ALL {
            let t = self.get(stage);
            if t.stage != stage {
                return Err(format!("stages.{} declares stage {}", stage.name(), t.stage.name()));
            }
            t.validate()?;
        }
        Ok(())
    }
}

/// The value a check key reads off a record.
pub fn record_value(record: &Record, key: &str) -> Option<f64> {
    match key {
        "duration_s" => record.duration_s(),
        "fps" => record.fps(),
        "width" => Some(f64::from(record.width())),
        "height" => Some(f64::from(record.height())),
        ARTIFACT_KEY => record.metrics().artifact_area_pct(),
        _ => record.metrics().get(key),
    }
}

/// Crop rectangle stored on a media item by the artifact gate.
pub fn item_crop(item: &MediaItem) -> Option<Rect> {
    item.extra.get("crop").and_then(|v| serde_json::from_value(v.clone()).ok())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ArtifactDecision {
    Keep,
    KeepWithCrop { rect: Rect },
    Discard,
}

/// The interior left after removing a margin band of 10% of each dimension
/// on every side.
pub fn interior_rect(width: u32, height: u32) -> Rect {
    let (mx, my) = (width / 10, height / 10);
    Rect { x: mx, y: my, w: width - 2 * mx, h: height - 2 * my }
}

/// Keep, crop or discard given artifact coverage (percent of the frame)
/// and the detected boxes. Boxes confined to the margin band are cropped
/// away; anything reaching the interior is kept as is.
pub fn artifact_gate(width: u32, height: u32, area_pct: f64, boxes: &[Rect], max_pct: f64) -> ArtifactDecision {
    if !(area_pct <= max_pct) {
        return ArtifactDecision::Discard;
    }
    if boxes.is_empty() {
        return ArtifactDecision::Keep;
    }
    let interior = interior_rect(width, height);
    if interior.w == 0 || interior.h == 0 {
        return ArtifactDecision::Keep;
    }
    if boxes.iter().all(|b| !b.intersects(&interior)) {
        ArtifactDecision::KeepWithCrop { rect: interior }
    } else {
        ArtifactDecision::Keep
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{item_id}: {source}")]
    Scorer {
        item_id: String,
        #[source]
        source: ScorerError,
    },
    #[error("{item_id}: {source}")]
    Media {
        item_id: String,
        #[source]
        source: IngestError,
    },
    #[error("{item_id}: {message}")]
    Invalid { item_id: String, message: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Scorer { .. } => ErrorClass::Scorer,
            PipelineError::Media { source, .. } => source.class(),
            PipelineError::Invalid { .. } => ErrorClass::Validation,
            PipelineError::Manifest(e) => e.class(),
            PipelineError::Io { .. } => ErrorClass::Io,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub stage: Stage,
    pub thresholds: StageThresholds,
    pub segmenter: SegmenterConfig,
    pub decode_template: String,
    pub skip_on_scorer_error: bool,
    /// Require both mid-frame caption slots on video caption sets.
    pub require_mid_frame_captions: bool,
    /// Receives clip FramePacks, mid-frame stills and converted media.
    pub work_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(stage: Stage, work_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            stage,
            thresholds: StageThresholds::defaults(stage),
            segmenter: SegmenterConfig::default(),
            decode_template: DEFAULT_DECODE_TEMPLATE.to_string(),
            skip_on_scorer_error: false,
            require_mid_frame_captions: true,
            work_dir: work_dir.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub step: Step,
    pub metric_key: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub stage: String,
    pub input: usize,
    /// Raw videos replaced by their clips.
    pub segmented: usize,
    pub clips_created: usize,
    pub kept: usize,
    pub dropped: usize,
    pub dropped_by_step: BTreeMap<String, usize>,
    pub cropped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Record>,
    pub dropped: Vec<Dropped>,
    /// Ids of raw videos that were split into clips. Each produced at
    /// least one clip; the clips are accounted for in `kept`/`dropped`.
    pub segmented: Vec<String>,
    pub decisions: Vec<DecisionRecord>,
    pub summary: Summary,
}

/// Where [`FilterOutcome::write`] puts its files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputPaths {
    pub kept: PathBuf,
    pub dropped: PathBuf,
    pub decisions: PathBuf,
    pub summary: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            kept: dir.join("kept.jsonl"),
            dropped: dir.join("dropped.jsonl"),
            decisions: dir.join("decisions.jsonl"),
            summary: dir.join("summary.json"),
        }
    }
}

impl FilterOutcome {
    pub fn write(&self, paths: &OutputPaths) -> Result<(), PipelineError> {
        for p in [&paths.kept, &paths.dropped, &paths.decisions, &paths.summary] {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|source| PipelineError::Io { path: parent.to_path_buf(), source })?;
            }
        }
        manifest::write_manifest(&self.kept, &paths.kept)?;
        manifest::write_jsonl(&self.dropped, &paths.dropped)?;
        manifest::write_decisions(&self.decisions, &paths.decisions)?;
        let summary = crate::numfmt::canonical_json(&self.summary).map_err(ManifestError::from)?;
        fs::write(&paths.summary, summary + "\n").map_err(|source| PipelineError::Io { path: paths.summary.clone(), source })?;
        Ok(())
    }
}

/// How a single record left the funnel.
enum Fate {
    Kept(Record, bool),
    Dropped(Dropped),
    Segmented(Vec<Record>),
}

struct Processed {
    id: String,
    fate: Fate,
    decisions: Vec<DecisionRecord>,
}

/// Early exit from the per-item chain.
enum Halt {
    Drop(Dropped),
    Fail(PipelineError),
}

impl From<PipelineError> for Halt {
    fn from(e: PipelineError) -> Self {
        Halt::Fail(e)
    }
}

/// Per-record working state: lazily loaded frames and derived media paths.
struct Item<'p> {
    pipe: &'p Pipeline<'p>,
    record: Record,
    decisions: Vec<DecisionRecord>,
    pack: Option<FramePack>,
    media_path: Option<String>,
    mid_path: Option<String>,
}

pub struct Pipeline<'a> {
    config: &'a PipelineConfig,
    scorer: &'a dyn Scorer,
    exec: &'a Executor,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig, scorer: &'a dyn Scorer, exec: &'a Executor) -> Self {
        Pipeline { config, scorer, exec }
    }

    fn stage(&self) -> &str {
        self.config.stage.name()
    }

    /// Runs the funnel. Fails on the first hard error (scorer failure
    /// without `skip_on_scorer_error`, unreadable media, invalid records).
    pub fn run(&self, records: Vec<Record>) -> Result<FilterOutcome, PipelineError> {
        manifest::validate_all(&records)?;
        let input = records.len();
        let first = self.exec.map(&records, |r| self.process_raw(r));
        let mut processed = Vec::with_capacity(first.len());
        let mut candidates = Vec::new();
        for p in first {
            let p = p?;
            match &p.fate {
                Fate::Segmented(clips) => candidates.extend(clips.iter().cloned()),
                Fate::Kept(r, _) => candidates.push(r.clone()),
                Fate::Dropped(_) => {}
            }
            if !matches!(p.fate, Fate::Kept(..)) {
                processed.push(p);
            }
        }
        let mut seen = BTreeSet::new();
        for c in &candidates {
            if !seen.insert(c.id().to_string()) {
                return Err(PipelineError::Invalid { item_id: c.id().to_string(), message: "clip id collides with another record".into() });
            }
        }
        for p in self.exec.map(&candidates, |r| self.process(r.clone())) {
            processed.push(p?);
        }
        Ok(self.collect(input, processed))
    }

    fn collect(&self, input: usize, mut processed: Vec<Processed>) -> FilterOutcome {
        processed.sort_by(|a, b| a.id.cmp(&b.id));
        let mut out = FilterOutcome::default();
        let mut summary = Summary { stage: self.stage().to_string(), input, ..Default::default() };
        for p in processed {
            out.decisions.extend(p.decisions);
            match p.fate {
                Fate::Kept(r, cropped) => {
                    summary.cropped += usize::from(cropped);
                    out.kept.push(r);
                }
                Fate::Dropped(d) => {
                    *summary.dropped_by_step.entry(d.step.as_str().to_string()).or_default() += 1;
                    out.dropped.push(d);
                }
                Fate::Segmented(clips) => {
                    summary.clips_created += clips.len();
                    out.segmented.push(p.id);
                }
            }
        }
        summary.segmented = out.segmented.len();
        summary.kept = out.kept.len();
        summary.dropped = out.dropped.len();
        out.summary = summary;
        out
    }

    /// Raw videos: prefilter (duration lower bound only, since scenes are
    /// trimmed down to size), then segmentation. Everything else passes
    /// through untouched.
    fn process_raw(&self, record: &Record) -> Result<Processed, PipelineError> {
        let id = record.id().to_string();
        if !record.is_raw_video() {
            return Ok(Processed { id, fate: Fate::Kept(record.clone(), false), decisions: Vec::new() });
        }
        let mut item = Item::new(self, record.clone());
        let fate = match item.segment() {
            Ok(clips) => Fate::Segmented(clips),
            Err(Halt::Drop(d)) => Fate::Dropped(d),
            Err(Halt::Fail(e)) => return Err(e),
        };
        Ok(Processed { id, fate, decisions: item.finish_decisions() })
    }

    fn process(&self, record: Record) -> Result<Processed, PipelineError> {
        let id = record.id().to_string();
        let mut item = Item::new(self, record);
        let fate = match item.filter() {
            Ok(cropped) => {
                item.fill_proxies();
                let ids = item.decision_ids();
                let mut record = item.record.clone();
                record.decisions_mut().extend(ids);
                Fate::Kept(record, cropped)
            }
            Err(Halt::Drop(d)) => Fate::Dropped(d),
            Err(Halt::Fail(e)) => return Err(e),
        };
        Ok(Processed { id, fate, decisions: item.finish_decisions() })
    }

    /// Fills every metric and caption the scorer can provide without
    /// applying any threshold. Raw videos are scored as they are.
    pub fn score(&self, records: Vec<Record>) -> Result<Vec<Record>, PipelineError> {
        manifest::validate_all(&records)?;
        let mut out = Vec::with_capacity(records.len());
        for r in self.exec.map(&records, |r| {
            let mut item = Item::new(self, r.clone());
            item.score_all().map(|_| {
                item.fill_proxies();
                item.record
            })
        }) {
            out.push(r?);
        }
        out.sort_by(|a, b| a.id().cmp(b.id()));
        Ok(out)
    }
}

fn task_for(key: &str) -> Option<Task> {
    Some(match key {
        "dover" => Task::Dover,
        "lpips" => Task::LpipsConsistency,
        "unimatch" => Task::UnimatchMotion,
        "aesthetic" => Task::Aesthetic,
        "text_area_pct" => Task::TextArea,
        "watermark_area_pct" => Task::WatermarkArea,
        _ => return None,
    })
}

impl<'p> Item<'p> {
    fn new(pipe: &'p Pipeline<'p>, record: Record) -> Self {
        Item { pipe, record, decisions: Vec::new(), pack: None, media_path: None, mid_path: None }
    }

    fn id(&self) -> String {
        self.record.id().to_string()
    }

    fn stage(&self) -> &str {
        self.pipe.stage()
    }

    fn cfg(&self) -> &PipelineConfig {
        self.pipe.config
    }

    fn decision_ids(&self) -> Vec<String> {
        (0..self.decisions.len()).map(|i| format!("{}#{i:02}", self.record.id())).collect()
    }

    fn finish_decisions(&mut self) -> Vec<DecisionRecord> {
        let ids = self.decision_ids();
        let mut out = std::mem::take(&mut self.decisions);
        for (d, id) in out.iter_mut().zip(ids) {
            d.id = id;
        }
        out
    }

    fn drop_at(&self, step: Step, key: &str) -> Halt {
        Halt::Drop(Dropped { id: self.id(), step, metric_key: key.to_string() })
    }

    fn media_err(&self, source: IngestError) -> PipelineError {
        PipelineError::Media { item_id: self.id(), source }
    }

    fn pack(&mut self) -> Result<&FramePack, PipelineError> {
        if self.pack.is_none() {
            let path = self.record.path().ok_or_else(|| PipelineError::Invalid { item_id: self.id(), message: "record has no media path".into() })?;
            let fps = self.record.fps().map_or(1, |f| f.round().max(1.0) as u32);
            let pack = ingest::load_media(Path::new(path), &self.cfg().decode_template, fps).map_err(|e| self.media_err(e))?;
            self.pack = Some(pack);
        }
        Ok(self.pack.as_ref().expect("loaded above"))
    }

    fn write_pack(&self, pack: &FramePack, sub: &str, name: &str) -> Result<String, PipelineError> {
        let dir = self.cfg().work_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|source| PipelineError::Io { path: dir.clone(), source })?;
        let path = dir.join(name);
        ingest::write_framepack(pack, &path).map_err(|e| self.media_err(e))?;
        Ok(path.to_string_lossy().into_owned())
    }

    /// Path of a FramePack holding this record's frames, converting the
    /// source into the work directory if it is not one already.
    fn media_path(&mut self) -> Result<String, PipelineError> {
        if let Some(p) = &self.media_path {
            return Ok(p.clone());
        }
        let source = self.record.path().map(str::to_string);
        let is_pack = source.as_deref().is_some_and(|p| {
            let mut head = [0u8; 4];
            fs::File::open(p).and_then(|mut f| std::io::Read::read_exact(&mut f, &mut head)).is_ok() && &head == ingest::MAGIC
        });
        let path = match source {
            Some(p) if is_pack => p,
            _ => {
                let pack = self.pack()?.clone();
                self.write_pack(&pack, "media", &format!("{}.fpk", self.id()))?
            }
        };
        self.media_path = Some(path.clone());
        Ok(path)
    }

    /// Single-frame pack of the middle frame; images are their own.
    fn mid_path(&mut self) -> Result<String, PipelineError> {
        if self.record.kind() == MediaKind::Image {
            return self.media_path();
        }
        if let Some(p) = &self.mid_path {
            return Ok(p.clone());
        }
        let pack = self.pack()?;
        let still = pack.still(metrics::mid_frame_index(pack.frame_count())).map_err(|e| self.media_err(e))?;
        let path = self.write_pack(&still, "frames", &format!("{}.mid.fpk", self.id()))?;
        self.mid_path = Some(path.clone());
        Ok(path)
    }

    fn request(&self, req: ScoreRequest) -> Result<ScoreResponse, Halt> {
        self.pipe.scorer.score(&req).map_err(|source| Halt::Fail(PipelineError::Scorer { item_id: self.id(), source }))
    }

    /// Converts a scorer failure into a drop when configured to.
    fn soften(&mut self, key: &str, halt: Halt) -> Halt {
        match halt {
            Halt::Fail(PipelineError::Scorer { source, .. }) if self.cfg().skip_on_scorer_error => {
                let d = DecisionRecord::failure(&self.id(), Step::ScorerError, key, self.stage(), source.to_string());
                self.decisions.push(d);
                self.drop_at(Step::ScorerError, key)
            }
            other => other,
        }
    }

    fn scored_value(&mut self, task: Task) -> Result<f64, Halt> {
        let kind = self.record.kind();
        let path = self.media_path()?;
        let resp = self.request(ScoreRequest::media(task, kind, path))?;
        Ok(resp.value.expect("value family checked by the scorer"))
    }

    /// Current value for `key`, computing or requesting it if absent.
    fn metric(&mut self, key: &str) -> Result<f64, Halt> {
        if let Some(v) = self.record.metrics().get(key) {
            return Ok(v);
        }
        let v = match key {
            "brightness" => {
                let pack = self.pack()?;
                metrics::mid_frame_brightness(pack).map_err(|e| PipelineError::Invalid { item_id: self.id(), message: e.to_string() })?
            }
            _ => {
                let task = task_for(key).ok_or_else(|| PipelineError::Invalid { item_id: self.id(), message: format!("no source for metric {key}") })?;
                match self.scored_value(task) {
                    Ok(v) => v,
                    Err(h) => return Err(self.soften(key, h)),
                }
            }
        };
        *self.record.metrics_mut().slot_mut(key).expect("known metric key") = Some(v);
        Ok(v)
    }

    fn evaluate(&mut self, check: &Check, value: Option<f64>) -> bool {
        let d = DecisionRecord::evaluated(&self.id(), check.step, check.key, value, check.threshold, self.stage());
        let passed = d.passed;
        self.decisions.push(d);
        passed
    }

    fn skip_rest(&mut self, rest: &[Check]) {
        for c in rest {
            let d = DecisionRecord::skipped(&self.id(), c.step, c.key, Some(c.threshold), self.stage());
            self.decisions.push(d);
        }
    }

    /// Records a kind mismatch; `None` if the kind fits the stage.
    fn kind_gate(&mut self) -> Option<Halt> {
        let want = self.pipe.config.stage.kind();
        if self.record.kind() == want {
            return None;
        }
        let d = DecisionRecord::failure(&self.id(), Step::DurationResolution, "kind", self.stage(), format!("{} in a {want} stage", self.record.kind()));
        self.decisions.push(d);
        Some(self.drop_at(Step::DurationResolution, "kind"))
    }

    fn segment(&mut self) -> Result<Vec<Record>, Halt> {
        if let Some(h) = self.kind_gate() {
            return Err(h);
        }
        let checks: Vec<Check> = self
            .cfg()
            .thresholds
            .checks()
            .into_iter()
            .filter(|c| c.step == Step::DurationResolution)
            .map(|c| match (c.key, c.threshold) {
                ("duration_s", Threshold::Closed { lo, .. }) => Check { threshold: Threshold::AtLeast { min: lo }, ..c },
                _ => c,
            })
            .collect();
        let mut first_fail = None;
        for c in &checks {
            let v = record_value(&self.record, c.key);
            if !self.evaluate(c, v) && first_fail.is_none() {
                first_fail = Some(c.key);
            }
        }
        if let Some(key) = first_fail {
            return Err(self.drop_at(Step::DurationResolution, key));
        }
        let Record::Item(parent) = self.record.clone() else { unreachable!("raw videos are media items") };
        let pack = self.pack()?.clone();
        let curve = scenedetect::content_curve(&pack).map_err(|e| self.media_err(e))?;
        let cuts = scenedetect::detect_cuts(&curve, &self.cfg().segmenter);
        let mut parent = parent;
        parent.frame_count = Some(pack.frame_count() as u64);
        if pack.fps() > 0.0 {
            parent.fps = Some(pack.fps());
        }
        let mut clips = Vec::new();
        for mut clip in scenedetect::extract_clips(&parent, &cuts, &self.cfg().segmenter) {
            let frames = pack.slice(clip.span[0] as usize, clip.span[1] as usize).map_err(|e| self.media_err(e))?;
            clip.path = Some(self.write_pack(&frames, "clips", &format!("{}.fpk", clip.id))?);
            clips.push(Record::Clip(clip));
        }
        let check = Check { step: Step::SceneSegmentation, key: "scene_count", threshold: Threshold::AtLeast { min: 1.0 } };
        if !self.evaluate(&check, Some(clips.len() as f64)) {
            return Err(self.drop_at(Step::SceneSegmentation, "scene_count"));
        }
        Ok(clips)
    }

    /// The per-item chain for a non-raw record. Returns whether a crop was
    /// applied.
    fn filter(&mut self) -> Result<bool, Halt> {
        if let Some(h) = self.kind_gate() {
            return Err(h);
        }
        let checks = self.cfg().thresholds.checks();
        let pre = checks.iter().take_while(|c| c.step == Step::DurationResolution).count();
        let mut first_fail = None;
        for c in &checks[..pre] {
            let v = record_value(&self.record, c.key);
            if !self.evaluate(c, v) && first_fail.is_none() {
                first_fail = Some(c.key);
            }
        }
        if let Some(key) = first_fail {
            self.skip_rest(&checks[pre..]);
            return Err(self.drop_at(Step::DurationResolution, key));
        }
        let mut cropped = false;
        for (i, c) in checks.iter().enumerate().skip(pre) {
            let passed = match c.step {
                Step::Artifacts => match self.artifacts(c) {
                    Ok(crop) => {
                        cropped = crop;
                        true
                    }
                    Err(Halt::Drop(d)) if d.step == Step::Artifacts => false,
                    Err(h) => return Err(h),
                },
                Step::ClipSimilarity => self.clip_similarity(c)?,
                _ => {
                    let v = self.metric(c.key)?;
                    self.evaluate(c, Some(v))
                }
            };
            if !passed {
                self.skip_rest(&checks[i + 1..]);
                return Err(self.drop_at(c.step, c.key));
            }
        }
        self.fine_captions()?;
        Ok(cropped)
    }

    fn artifacts(&mut self, check: &Check) -> Result<bool, Halt> {
        let text = self.metric("text_area_pct")?;
        let watermark = self.metric("watermark_area_pct")?;
        let area = text + watermark;
        let Threshold::AtMost { max } = check.threshold else { unreachable!("artifact bound is a maximum") };
        let boxes: Vec<Rect> = match self.record.extra().get("artifact_boxes") {
            None | Some(Value::Null) => Vec::new(),
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| PipelineError::Invalid { item_id: self.id(), message: format!("artifact_boxes: {e}") })?,
        };
        let decision = artifact_gate(self.record.width(), self.record.height(), area, &boxes, max);
        let mut d = DecisionRecord::evaluated(&self.id(), check.step, check.key, Some(area), check.threshold, self.stage());
        if let ArtifactDecision::KeepWithCrop { rect } = decision {
            d = d.with_note(format!("crop {}x{}+{}+{}", rect.w, rect.h, rect.x, rect.y));
        }
        self.decisions.push(d);
        match decision {
            ArtifactDecision::Discard => Err(self.drop_at(Step::Artifacts, check.key)),
            ArtifactDecision::Keep => Ok(false),
            ArtifactDecision::KeepWithCrop { rect } => {
                match &mut self.record {
                    Record::Clip(c) => c.crop = Some(rect),
                    Record::Item(m) => {
                        m.extra.insert("crop".into(), serde_json::to_value(rect).expect("rect serializes"));
                    }
                }
                Ok(true)
            }
        }
    }

    fn caption(&mut self, task: Task, kind: MediaKind, path: String, context: Option<String>, key: &str) -> Result<CoarseCaption, Halt> {
        let mut req = ScoreRequest::media(task, kind, path);
        if let Some(c) = context {
            req = req.with_text(c);
        }
        match self.request(req) {
            Ok(r) => Ok(CoarseCaption { tags: r.tags.unwrap_or_default(), text: r.text.unwrap_or_default() }),
            Err(h) => Err(self.soften(key, h)),
        }
    }

    fn embedding(&mut self, req: ScoreRequest) -> Result<Embedding, Halt> {
        match self.request(req) {
            Ok(r) => Embedding::new(r.embedding.unwrap_or_default()).map_err(|e| {
                let source = ScorerError::Schema(e.to_string());
                self.soften("clip_sim", Halt::Fail(PipelineError::Scorer { item_id: self.id(), source }))
            }),
            Err(h) => Err(self.soften("clip_sim", h)),
        }
    }

    /// Coarse caption of the middle frame: the existing one if present.
    fn mid_coarse(&mut self) -> Result<CoarseCaption, Halt> {
        if let Some(c) = self.record.captions() {
            return Ok(match self.record.kind() {
                MediaKind::Video => c.mid_frame_coarse.clone().unwrap_or_else(|| c.coarse.clone()),
                MediaKind::Image => c.coarse.clone(),
            });
        }
        let path = self.mid_path()?;
        self.caption(Task::CaptionCoarse, MediaKind::Image, path, None, "caption_coarse")
    }

    fn compute_clip_sim(&mut self) -> Result<f64, Halt> {
        if let Some(v) = self.record.metrics().clip_sim {
            return Ok(v);
        }
        let coarse = self.mid_coarse()?;
        let mid = self.mid_path()?;
        let text = self.embedding(ScoreRequest::text(Task::EmbedText, coarse.text.clone()))?;
        let image = self.embedding(ScoreRequest::media(Task::EmbedImage, MediaKind::Image, mid))?;
        let sim = metrics::cosine_similarity(&text, &image).map_err(|e| {
            let source = ScorerError::Schema(format!("embeddings: {e}"));
            self.soften("clip_sim", Halt::Fail(PipelineError::Scorer { item_id: self.id(), source }))
        })?;
        self.record.metrics_mut().clip_sim = Some(sim);
        Ok(sim)
    }

    fn clip_similarity(&mut self, check: &Check) -> Result<bool, Halt> {
        let sim = self.compute_clip_sim()?;
        Ok(self.evaluate(check, Some(sim)))
    }

    fn build_captions(&mut self) -> Result<CaptionSet, Halt> {
        let kind = self.record.kind();
        let media = self.media_path()?;
        let mid_coarse = self.mid_coarse()?;
        let set = match kind {
            MediaKind::Image => {
                let fine = self.caption(Task::CaptionFine, kind, media, Some(build_fine_instruction(&mid_coarse, kind)), "caption_fine")?;
                assemble_caption_set(kind, mid_coarse, fine.text, None, None, false)
            }
            MediaKind::Video => {
                let coarse = self.caption(Task::CaptionCoarse, kind, media.clone(), None, "caption_coarse")?;
                let fine = self.caption(Task::CaptionFine, kind, media, Some(build_fine_instruction(&coarse, kind)), "caption_fine")?;
                let mid = self.mid_path()?;
                let mid_instr = build_fine_instruction(&mid_coarse, MediaKind::Image);
                let mid_fine = self.caption(Task::CaptionFine, MediaKind::Image, mid, Some(mid_instr), "caption_fine")?;
                assemble_caption_set(kind, coarse, fine.text, Some(mid_coarse), Some(mid_fine.text), self.cfg().require_mid_frame_captions)
            }
        };
        set.map_err(|e| Halt::Fail(PipelineError::Invalid { item_id: self.id(), message: e.to_string() }))
    }

    fn fine_captions(&mut self) -> Result<(), Halt> {
        if self.record.captions().is_some() {
            return Ok(());
        }
        let set = self.build_captions()?;
        self.record.set_captions(set);
        Ok(())
    }

    /// Built-in proxies, filled only when the frames are at hand anyway.
    fn fill_proxies(&mut self) {
        let Some(pack) = &self.pack else { return };
        if pack.frame_count() < 2 {
            return;
        }
        let motion = metrics::motion_proxy(pack).ok();
        let consistency = metrics::consistency_proxy(pack).ok();
        let m = self.record.metrics_mut();
        m.motion_proxy = m.motion_proxy.or(motion);
        m.consistency_proxy = m.consistency_proxy.or(consistency);
    }

    fn score_all(&mut self) -> Result<(), PipelineError> {
        let video = self.record.kind() == MediaKind::Video;
        let keys: &[&str] = if video {
            &["brightness", "dover", "lpips", "unimatch", "aesthetic", "text_area_pct", "watermark_area_pct"]
        } else {
            &["brightness", "aesthetic", "text_area_pct", "watermark_area_pct"]
        };
        let halt = |h: Halt| match h {
            Halt::Fail(e) => e,
            Halt::Drop(d) => PipelineError::Invalid { item_id: d.id, message: format!("scoring stopped at {}", d.metric_key) },
        };
        for key in keys {
            self.metric(key).map_err(halt)?;
        }
        self.compute_clip_sim().map_err(halt)?;
        self.fine_captions().map_err(halt)?;
        Ok(())
    }
}
