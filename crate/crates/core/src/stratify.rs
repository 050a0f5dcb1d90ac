//! Assignment of scored records to the training stages.
//!
//! Stages overlap: a record joins every stage whose full threshold column
//! it satisfies. Under the default columns the video stages nest,
//! fine-tune ⊆ 720p ⊆ 360p.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::filterpipe::{record_value, PipelineError, Stage, StageSet};
use crate::manifest::{self, DecisionRecord, Record, Step};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAssignment {
    pub item_id: String,
    pub stages: Vec<Stage>,
}

impl StageAssignment {
    pub fn contains(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

/// Checks `record` against every column. A missing metric excludes only the
/// stages that need it, with an `unscored` decision.
pub fn assign_stages(record: &Record, stages: &StageSet) -> (StageAssignment, Vec<DecisionRecord>) {
    let id = record.id();
    let mut decisions = Vec::new();
    let mut member = Vec::new();
    for t in stages.iter() {
        if record.kind() != t.stage.kind() {
            continue;
        }
        let mut ok = true;
        for c in t.checks() {
            match record_value(record, c.key) {
                None => {
                    decisions.push(DecisionRecord::failure(id, Step::Stratification, c.key, t.stage.name(), "unscored"));
                    ok = false;
                }
                Some(v) if !c.threshold.admits(v) => {
                    decisions.push(DecisionRecord::evaluated(id, Step::Stratification, c.key, Some(v), c.threshold, t.stage.name()));
                    ok = false;
                }
                Some(_) => {}
            }
        }
        if ok {
            member.push(t.stage);
        }
    }
    for (i, d) in decisions.iter_mut().enumerate() {
        d.id = format!("{id}#s{i:02}");
    }
    (StageAssignment { item_id: id.to_string(), stages: member }, decisions)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stratified {
    pub assignments: Vec<StageAssignment>,
    pub decisions: Vec<DecisionRecord>,
}

/// Assigns every record; output sorted by id.
pub fn assign_all(records: &[Record], stages: &StageSet, exec: &Executor) -> Stratified {
    let mut pairs = exec.map(records, |r| assign_stages(r, stages));
    pairs.sort_by(|a, b| a.0.item_id.cmp(&b.0.item_id));
    let mut out = Stratified::default();
    for (a, d) in pairs {
        out.assignments.push(a);
        out.decisions.extend(d);
    }
    out
}

pub fn stage_file_name(stage: Stage) -> String {
    format!("stage_{}.jsonl", stage.name())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifySummary {
    pub records: usize,
    pub counts: BTreeMap<String, usize>,
    pub unassigned: usize,
}

/// Writes one manifest per stage (members sorted by id, possibly empty)
/// and `stratify_summary.json`; returns the summary.
pub fn emit_stage_manifests(assignments: &[StageAssignment], records: &[Record], outdir: &Path) -> Result<StratifySummary, PipelineError> {
    fs::create_dir_all(outdir).map_err(|source| PipelineError::Io { path: outdir.to_path_buf(), source })?;
    let by_id: BTreeMap<&str, &Record> = records.iter().map(|r| (r.id(), r)).collect();
    let mut summary = StratifySummary { records: assignments.len(), ..Default::default() };
    for stage in Stage::ALL {
        let mut members: Vec<Record> = assignments
            .iter()
            .filter(|a| a.contains(stage))
            .map(|a| {
                by_id.get(a.item_id.as_str()).map(|r| (*r).clone()).ok_or_else(|| PipelineError::Invalid {
                    item_id: a.item_id.clone(),
                    message: "assignment without a record".into(),
                })
            })
            .collect::<Result<_, _>>()?;
        members.sort_by(|a, b| a.id().cmp(b.id()));
        manifest::write_manifest(&members, &outdir.join(stage_file_name(stage)))?;
        summary.counts.insert(stage.name().to_string(), members.len());
    }
    summary.unassigned = assignments.iter().filter(|a| a.stages.is_empty()).count();
    let path: PathBuf = outdir.join("stratify_summary.json");
    let text = crate::numfmt::canonical_json(&summary).map_err(manifest::ManifestError::from)?;
    fs::write(&path, text + "\n").map_err(|source| PipelineError::Io { path, source })?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ClipRecord, MediaItem, MetricVector};

    fn video(aesthetic: f64) -> Record {
        Record::Clip(ClipRecord {
            id: "c".into(),
            parent_id: "p".into(),
            span: [0, 240],
            fps: 30.0,
            source_fps: 30.0,
            duration_s: 8.0,
            width: 1920,
            height: 1080,
            source_width: 1920,
            source_height: 1080,
            crop: None,
            path: None,
            source: "p".into(),
            metrics: MetricVector {
                brightness: Some(100.0),
                aesthetic: Some(aesthetic),
                clip_sim: Some(0.22),
                dover: Some(0.08),
                lpips: Some(0.06),
                unimatch: Some(5.0),
                text_area_pct: Some(0.01),
                ..Default::default()
            },
            captions: None,
            decisions: Vec::new(),
            extra: Default::default(),
        })
    }

    #[test]
    fn worked_examples() {
        let set = StageSet::default();
        let (a, _) = assign_stages(&video(5.5), &set);
        assert_eq!(a.stages, vec![Stage::T2vPretrain360p, Stage::T2vPretrain720p, Stage::T2vFinetune]);
        let (a, _) = assign_stages(&video(4.9), &set);
        assert_eq!(a.stages, vec![Stage::T2vPretrain360p]);
        let mut img = MediaItem::image("i", "i.png", 800, 600);
        img.metrics = MetricVector { brightness: Some(100.0), aesthetic: Some(5.0), clip_sim: Some(0.18), text_area_pct: Some(0.02), ..Default::default() };
        let (a, _) = assign_stages(&Record::Item(img), &set);
        assert_eq!(a.stages, vec![Stage::T2iPretrain]);
    }

    #[test]
    fn unscored_excludes_only_needing_stages() {
        let mut r = video(5.5);
        r.metrics_mut().dover = None;
        let (a, d) = assign_stages(&r, &StageSet::default());
        assert_eq!(a.stages, vec![Stage::T2vPretrain360p, Stage::T2vPretrain720p]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].note.as_deref(), Some("unscored"));
        assert_eq!(d[0].stage, "t2v_finetune");
    }
}
