mod common;

use std::collections::BTreeSet;
use std::path::Path;

use vidcurate::filterpipe::{item_crop, OutputPaths, Pipeline, PipelineConfig, PipelineError, Stage};
use vidcurate::ingest;
use vidcurate::manifest::{self, MediaKind, MetricVector, Record, Rect, Step};
use vidcurate::scorers::{MockScorer, OfflineScorer, Task};
use vidcurate::Executor;

fn write_clip_pack(dir: &Path, id: &str) -> String {
    let mut rng = common::rng(9);
    let (pack, _) = common::scene_video(&mut rng, 16, 9, &[120]);
    let path = dir.join(format!("{id}.fpk"));
    ingest::write_framepack(&pack, &path).unwrap();
    path.to_string_lossy().into_owned()
}

/// A clip on disk with nothing scored but what `metrics` carries.
fn bare_clip(dir: &Path, id: &str, metrics: MetricVector) -> Record {
    let mut r = common::clip(id, 240, 30.0, 1920, 1080, metrics);
    if let Record::Clip(c) = &mut r {
        c.path = Some(write_clip_pack(dir, id));
        c.captions = None;
    }
    r
}

fn tasks(scorer: &MockScorer) -> Vec<Task> {
    scorer.requests().iter().map(|r| r.task).collect()
}

#[test]
fn failing_step_short_circuits_scoring() {
    let tmp = tempfile::tempdir().unwrap();
    let record = bare_clip(tmp.path(), "c", MetricVector { aesthetic: Some(4.0), ..Default::default() });
    let cfg = PipelineConfig::new(Stage::T2vPretrain360p, tmp.path().join("work"));
    let scorer = MockScorer::new(1);
    let out = Pipeline::new(&cfg, &scorer, &Executor::sequential()).run(vec![record]).unwrap();
    assert_eq!(scorer.request_count(), 0, "{:?}", tasks(&scorer));
    assert_eq!(out.dropped.len(), 1);
    assert_eq!(out.dropped[0].metric_key, "aesthetic");
    let after: Vec<_> = out.decisions.iter().skip_while(|d| d.metric_key != "aesthetic").skip(1).collect();
    assert!(!after.is_empty() && after.iter().all(|d| d.skipped && !d.passed));
    assert!(out.decisions.iter().all(|d| d.is_consistent()));
}

#[test]
fn pretrain_stage_never_asks_for_motion_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let records = (0..6).map(|i| bare_clip(tmp.path(), &format!("c{i}"), MetricVector { aesthetic: Some(6.0), ..Default::default() })).collect();
    let cfg = PipelineConfig::new(Stage::T2vPretrain360p, tmp.path().join("work"));
    let scorer = MockScorer::new(1);
    Pipeline::new(&cfg, &scorer, &Executor::sequential()).run(records).unwrap();
    let seen = tasks(&scorer);
    assert!(seen.contains(&Task::TextArea));
    for t in [Task::Dover, Task::LpipsConsistency, Task::UnimatchMotion] {
        assert!(!seen.contains(&t), "{t} requested at the 360p stage");
    }
}

#[test]
fn low_dover_drops_at_finetune() {
    let tmp = tempfile::tempdir().unwrap();
    let metrics = MetricVector { brightness: Some(100.0), dover: Some(0.06), ..Default::default() };
    let cfg = PipelineConfig::new(Stage::T2vFinetune, tmp.path().join("work"));
    let scorer = MockScorer::new(1);
    let out = Pipeline::new(&cfg, &scorer, &Executor::sequential()).run(vec![bare_clip(tmp.path(), "c", metrics)]).unwrap();
    assert_eq!(out.dropped[0].metric_key, "dover");
    assert_eq!(out.dropped[0].step, Step::LowLevelMetrics);
    assert_eq!(scorer.request_count(), 0);
    let d = out.decisions.iter().find(|d| d.metric_key == "dover").unwrap();
    assert_eq!((d.value, d.passed), (Some(0.06), false));
}

#[test]
fn bright_clip_is_dropped() {
    let tmp = tempfile::tempdir().unwrap();
    let record = bare_clip(tmp.path(), "c", MetricVector { brightness: Some(190.0), ..Default::default() });
    let cfg = PipelineConfig::new(Stage::T2vPretrain720p, tmp.path().join("work"));
    let out = Pipeline::new(&cfg, &OfflineScorer, &Executor::sequential()).run(vec![record]).unwrap();
    assert_eq!(out.dropped[0].metric_key, "brightness");
    assert_eq!(out.summary.dropped_by_step.get("low_level_metrics"), Some(&1));
}

#[test]
fn empty_manifest_gives_empty_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::new(Stage::T2iPretrain, tmp.path().join("work"));
    let out = Pipeline::new(&cfg, &OfflineScorer, &Executor::sequential()).run(Vec::new()).unwrap();
    assert_eq!((out.summary.input, out.summary.kept, out.summary.dropped), (0, 0, 0));
    let paths = OutputPaths::in_dir(tmp.path());
    out.write(&paths).unwrap();
    assert!(manifest::load_manifest(&paths.kept).unwrap().is_empty());
    assert!(manifest::load_decisions(&paths.decisions).unwrap().is_empty());
}

#[test]
fn scorer_outage_is_fatal_unless_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let records = vec![bare_clip(tmp.path(), "a", MetricVector::default()), bare_clip(tmp.path(), "b", MetricVector::default())];
    let mut cfg = PipelineConfig::new(Stage::T2vPretrain360p, tmp.path().join("work"));
    let exec = Executor::sequential();
    let err = Pipeline::new(&cfg, &OfflineScorer, &exec).run(records.clone()).unwrap_err();
    assert!(matches!(err, PipelineError::Scorer { .. }), "{err}");

    cfg.skip_on_scorer_error = true;
    let out = Pipeline::new(&cfg, &OfflineScorer, &exec).run(records).unwrap();
    assert_eq!(out.dropped.len(), 2);
    assert!(out.dropped.iter().all(|d| d.step == Step::ScorerError && d.metric_key == "aesthetic"));
    let notes: Vec<_> = out.decisions.iter().filter(|d| d.step == Step::ScorerError).collect();
    assert_eq!(notes.len(), 2);
    assert!(notes.iter().all(|d| d.note.is_some() && !d.passed));
}

#[test]
fn border_text_is_cropped_away() {
    let tmp = tempfile::tempdir().unwrap();
    let metrics = MetricVector {
        brightness: Some(100.0),
        aesthetic: Some(6.0),
        text_area_pct: Some(0.01),
        watermark_area_pct: Some(0.0),
        clip_sim: Some(0.3),
        ..Default::default()
    };
    let mut record = common::image("img", 1280, 720, metrics);
    let strip = Rect { x: 100, y: 5, w: 300, h: 20 };
    if let Record::Item(m) = &mut record {
        m.extra.insert("artifact_boxes".into(), serde_json::to_value([strip]).unwrap());
    }
    let cfg = PipelineConfig::new(Stage::T2iPretrain, tmp.path().join("work"));
    let out = Pipeline::new(&cfg, &OfflineScorer, &Executor::sequential()).run(vec![record]).unwrap();
    assert_eq!(out.summary.cropped, 1);
    let Record::Item(kept) = &out.kept[0] else { panic!("image expected") };
    // Oracle: drop a 10% band on every side.
    let (mx, my) = (128, 72);
    assert_eq!(item_crop(kept), Some(Rect { x: mx, y: my, w: 1280 - 2 * mx, h: 720 - 2 * my }));
}

#[test]
fn small_corpus_survives_a_manifest_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let records = common::straddle_corpus(20, 3);
    let path = tmp.path().join("scored.jsonl");
    manifest::write_manifest(&records, &path).unwrap();
    let reloaded = manifest::load_manifest(&path).unwrap();
    // Floats are stored at 9 significant digits; values placed just off a
    // bound must stay on their side of it.
    assert_eq!(reloaded.len(), records.len());
    for (a, b) in records.iter().zip(&reloaded) {
        assert_eq!(common::oracle_stages(a), common::oracle_stages(b), "{}", a.id());
    }
    for stage in Stage::ALL {
        let cfg = PipelineConfig::new(stage, tmp.path().join("work"));
        let out = Pipeline::new(&cfg, &OfflineScorer, &Executor::with_workers(3)).run(reloaded.clone()).unwrap();
        let got: BTreeSet<_> = out.kept.iter().map(|r| r.id().to_string()).collect();
        let want: BTreeSet<_> = records.iter().filter(|r| common::oracle_stages(r).contains(stage.name())).map(|r| r.id().to_string()).collect();
        assert_eq!(got, want, "{stage}");
        assert_eq!(out.kept.len() + out.dropped.len(), records.len());
    }
}

#[test]
fn raw_video_is_segmented_and_accounted_for() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = common::rng(4);
    let (pack, cuts) = common::scene_video(&mut rng, 16, 9, &[150, 90, 30, 200]);
    assert_eq!(cuts, vec![150, 240, 270]);
    let path = tmp.path().join("raw.fpk");
    ingest::write_framepack(&pack, &path).unwrap();
    let raw = Record::Item(vidcurate::manifest::MediaItem::video("raw", path.to_string_lossy(), 1280, 720, 30.0, 470));
    let image = common::image("pic", 800, 600, MetricVector::default());
    let cfg = PipelineConfig::new(Stage::T2vPretrain360p, tmp.path().join("work"));
    let out = Pipeline::new(&cfg, &MockScorer::new(3), &Executor::with_workers(2)).run(vec![raw, image]).unwrap();
    assert_eq!(out.segmented, vec!["raw".to_string()]);
    // Scenes of 150, 90 and 200 frames survive trimming; 30 frames do not.
    assert_eq!(out.summary.clips_created, 3);
    let mut ids: Vec<String> = out.kept.iter().map(|r| r.id().to_string()).chain(out.dropped.iter().map(|d| d.id.clone())).collect();
    ids.sort();
    assert_eq!(ids, ["pic", "raw-scene000", "raw-scene001", "raw-scene003"]);
    let pic = out.dropped.iter().find(|d| d.id == "pic").unwrap();
    assert_eq!(pic.metric_key, "kind");
    for r in &out.kept {
        let Record::Clip(c) = r else { panic!("only clips can be kept at a video stage") };
        assert_eq!(r.kind(), MediaKind::Video);
        assert!(Path::new(c.path.as_deref().unwrap()).exists());
        assert!(r.captions().is_some_and(|c| c.mid_frame_fine.is_some()));
    }
    let parent = out.decisions.iter().find(|d| d.item_id == "raw" && d.metric_key == "scene_count").unwrap();
    assert_eq!((parent.value, parent.passed), (Some(3.0), true));
}

#[test]
fn mock_scored_run_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let records = vec![bare_clip(tmp.path(), "c", MetricVector::default())];
    let cfg = PipelineConfig::new(Stage::T2vPretrain360p, tmp.path().join("work"));
    let runs: Vec<_> = (0..2).map(|_| Pipeline::new(&cfg, &MockScorer::new(8), &Executor::sequential()).run(records.clone()).unwrap()).collect();
    assert_eq!(runs[0].decisions, runs[1].decisions);
    assert_eq!(runs[0].kept, runs[1].kept);
}
