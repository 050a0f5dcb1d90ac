//! Corpus builders and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use vidcurate::ingest::{self, FramePack, PixelFormat};
use vidcurate::manifest::{CaptionSet, ClipRecord, CoarseCaption, MediaItem, MediaKind, MetricVector, Record};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn captions(kind: MediaKind) -> CaptionSet {
    let coarse = CoarseCaption { tags: vec!["outdoor".into(), "person".into()], text: "A person walks outside.".into() };
    let video = kind == MediaKind::Video;
    CaptionSet {
        coarse: coarse.clone(),
        fine: "A person walks along a path. Camera pans left.".into(),
        mid_frame_coarse: video.then(|| coarse.clone()),
        mid_frame_fine: video.then(|| "A person on a path.".into()),
        camera_motions: if video { vec!["pans left".into()] } else { Vec::new() },
    }
}

/// A fully scored clip whose duration is `frames / 30` seconds.
pub fn clip(id: &str, frames: u64, fps: f64, width: u32, height: u32, metrics: MetricVector) -> Record {
    Record::Clip(ClipRecord {
        id: id.into(),
        parent_id: format!("{id}-parent"),
        span: [0, frames],
        fps,
        source_fps: 30.0,
        duration_s: frames as f64 / 30.0,
        width,
        height,
        source_width: width,
        source_height: height,
        crop: None,
        path: None,
        source: "synthetic".into(),
        metrics,
        captions: Some(captions(MediaKind::Video)),
        decisions: Vec::new(),
        extra: Default::default(),
    })
}

pub fn image(id: &str, width: u32, height: u32, metrics: MetricVector) -> Record {
    let mut m = MediaItem::image(id, format!("{id}.png"), width, height);
    m.metrics = metrics;
    m.captions = Some(captions(MediaKind::Image));
    Record::Item(m)
}

fn nudge(rng: &mut StdRng, bound: f64) -> f64 {
    let d = 1e-6 * bound.abs().max(1.0);
    match rng.gen_range(0..3) {
        0 => bound - d,
        1 => bound,
        _ => bound + d,
    }
}

fn pick(rng: &mut StdRng, bounds: &[f64]) -> f64 {
    let b = bounds[rng.gen_range(0..bounds.len())];
    nudge(rng, b)
}

fn pick_int(rng: &mut StdRng, bounds: &[u32]) -> u32 {
    let b = bounds[rng.gen_range(0..bounds.len())];
    b - 1 + rng.gen_range(0..3)
}

/// `n` fully scored records (about a quarter images). Each value sits
/// comfortably inside every stage with probability `1 - p_edge`, otherwise
/// just below, on or just above one of the documented bounds.
pub fn straddle_corpus(n: usize, seed: u64) -> Vec<Record> {
    let mut rng = rng(seed);
    let p_edge = 0.12;
    (0..n)
        .map(|i| {
            let edge = |rng: &mut StdRng| rng.gen_bool(p_edge);
            let mut m = MetricVector::default();
            m.brightness = Some(if edge(&mut rng) { pick(&mut rng, &[20.0, 180.0]) } else { 100.0 });
            m.aesthetic = Some(if edge(&mut rng) { pick(&mut rng, &[4.8, 5.0, 5.3]) } else { 6.0 });
            m.clip_sim = Some(if edge(&mut rng) { pick(&mut rng, &[0.17, 0.20]) } else { 0.3 });
            let (text, watermark) = match rng.gen_range(0..10) {
                0 => (pick(&mut rng, &[0.05]), 0.0),
                1 => (0.03, pick(&mut rng, &[0.02])),
                _ => (0.01, 0.0),
            };
            m.text_area_pct = Some(text);
            m.watermark_area_pct = Some(watermark);
            let big = !edge(&mut rng);
            let size = |rng: &mut StdRng, full: u32, bounds: &[u32]| if big { full } else { pick_int(rng, bounds) };
            if i % 4 == 3 {
                let w = size(&mut rng, 1024, &[640]);
                let h = size(&mut rng, 768, &[368]);
                return image(&format!("img{i:04}"), w, h, m);
            }
            m.dover = Some(if edge(&mut rng) { pick(&mut rng, &[0.07]) } else { 0.4 });
            m.lpips = Some(if edge(&mut rng) { pick(&mut rng, &[0.05]) } else { 0.3 });
            m.unimatch = Some(if edge(&mut rng) { pick(&mut rng, &[1.0, 100.0]) } else { 20.0 });
            let frames = if edge(&mut rng) { (pick_int(&mut rng, &[60, 180, 480])) as u64 } else { 300 };
            let fps = if edge(&mut rng) { pick(&mut rng, &[23.0, 61.0]) } else { 30.0 };
            let w = size(&mut rng, 1920, &[640, 1280]);
            let h = size(&mut rng, 1080, &[368, 720]);
            clip(&format!("vid{i:04}"), frames, fps, w, h, m)
        })
        .collect()
}

/// Stage membership computed straight from the published threshold table.
pub fn oracle_stages(r: &Record) -> BTreeSet<&'static str> {
    let m = r.metrics();
    let v = |o: Option<f64>| o.expect("corpus records are fully scored");
    let (b, a, cs) = (v(m.brightness), v(m.aesthetic), v(m.clip_sim));
    let art = v(m.text_area_pct) + m.watermark_area_pct.unwrap_or(0.0);
    let (w, h) = (r.width(), r.height());
    let common = |mw: u32, mh: u32, amin: f64, csmin: f64| w >= mw && h >= mh && (20.0..=180.0).contains(&b) && a >= amin && art <= 0.05 && cs >= csmin;
    let mut out = BTreeSet::new();
    if r.kind() == MediaKind::Image {
        if common(640, 368, 4.8, 0.17) {
            out.insert("t2i_pretrain");
        }
        return out;
    }
    let d = r.duration_s().unwrap();
    let fps = r.fps().unwrap();
    let timing = |dmin: f64| dmin <= d && d <= 16.0 && 23.0 < fps && fps < 61.0;
    if timing(2.0) && common(640, 368, 4.8, 0.17) {
        out.insert("t2v_pretrain_360p");
    }
    if timing(2.0) && common(1280, 720, 5.0, 0.20) {
        out.insert("t2v_pretrain_720p");
    }
    let motion = v(m.dover) >= 0.07 && v(m.lpips) >= 0.05 && (1.0..=100.0).contains(&v(m.unimatch));
    if timing(6.0) && common(1280, 720, 5.3, 0.20) && motion {
        out.insert("t2v_finetune");
    }
    out
}

/// Solid-colour scenes separated by hard cuts. Dark and bright scenes
/// alternate so every cut changes the value channel by at least 120; within
/// a scene all channels drift together by at most 3, which leaves hue
/// untouched. Returns the pack and the true cut frames.
pub fn scene_video(rng: &mut StdRng, width: u32, height: u32, scene_lens: &[u64]) -> (FramePack, Vec<u64>) {
    let px = (width * height) as usize;
    let mut frames = Vec::new();
    let mut cuts = Vec::new();
    let mut at = 0;
    for (k, &len) in scene_lens.iter().enumerate() {
        if k > 0 {
            cuts.push(at);
        }
        let (lo, hi) = if k % 2 == 0 { (10u8, 60u8) } else { (180u8, 250u8) };
        let base: [u8; 3] = std::array::from_fn(|_| rng.gen_range(lo..=hi));
        for t in 0..len {
            let drift = (t % 4) as u8;
            let px_rgb = base.map(|c| c.saturating_add(drift));
            frames.push(px_rgb.repeat(px));
        }
        at += len;
    }
    (FramePack::from_frames(width, height, 30, 1, PixelFormat::Rgb8, &frames).unwrap(), cuts)
}

pub fn still(rng: &mut StdRng, width: u32, height: u32) -> FramePack {
    let data = (0..width * height * 3).map(|_| rng.gen_range(30..200u8)).collect();
    FramePack::new(width, height, 0, 1, PixelFormat::Rgb8, data).unwrap()
}

/// Mostly unscored corpus of `n` items on disk: raw multi-scene videos and
/// stills, some stills with artifact coverage already measured.
/// Frames are stored at a small proxy resolution; the manifest carries the
/// nominal geometry the thresholds see.
pub fn raw_corpus(dir: &Path, n: usize, seed: u64) -> Vec<Record> {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for i in 0..n {
        let path = dir.join(format!("item{i:03}.fpk"));
        let id = format!("item{i:03}");
        if i % 3 == 2 {
            ingest::write_framepack(&still(&mut rng, 24, 16), &path).unwrap();
            let mut m = MediaItem::image(id, path.to_string_lossy(), 1024, 768);
            if i % 2 == 0 {
                // As left by an earlier text-detection pass.
                m.metrics.text_area_pct = Some(0.0);
                m.metrics.watermark_area_pct = Some(0.0);
            }
            out.push(Record::Item(m));
        } else {
            let scenes: Vec<u64> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(40..=260)).collect();
            let (pack, _) = scene_video(&mut rng, 16, 9, &scenes);
            ingest::write_framepack(&pack, &path).unwrap();
            let frames = pack.frame_count() as u64;
            out.push(Record::Item(MediaItem::video(id, path.to_string_lossy(), 1280, 720, 30.0, frames)));
        }
    }
    out
}
