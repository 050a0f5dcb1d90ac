use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use vidcurate::config::{deep_merge, RunConfig};
use vidcurate::filterpipe::{OutputPaths, Pipeline, Stage};
use vidcurate::geometry::{self, CompatParams, GeometryConfig, Side};
use vidcurate::ingest::{self, FramePack};
use vidcurate::manifest::{self, MediaItem, Record};
use vidcurate::scorers::{self, HttpScorer, MockScorer, Scorer};
use vidcurate::{scenedetect, stats, stratify, Error, ErrorClass, Executor, Result};

#[derive(Parser)]
#[command(name = "vidcurate", version, about = "Curate image and video datasets for generative model training")]
struct Cli {
    /// JSON config merged over the defaults (falls back to $VIDCURATE_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe media files and write a manifest of items.
    Ingest(IngestArgs),
    /// Split raw videos into single-scene clips.
    Segment(SegmentArgs),
    /// Fill every metric and caption without filtering.
    Score(ScoreArgs),
    /// Run the filtering funnel for one stage.
    Filter(FilterArgs),
    /// Assign scored records to training stages.
    Stratify(StratifyArgs),
    /// Dataset statistics report.
    Stats(StatsArgs),
    /// Autoencoder geometry helpers.
    Geom {
        #[command(subcommand)]
        command: GeomCommand,
    },
    /// Serve the deterministic mock scorer until killed.
    MockScorer(MockArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Media files or directories (scanned one level deep).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Frame rate requested from the external decoder.
    #[arg(long, default_value_t = 30)]
    fps: u32,
    #[arg(long)]
    source: Option<String>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory receiving the clip FramePacks.
    #[arg(long)]
    work_dir: PathBuf,
}

#[derive(Args)]
struct ScorerArgs {
    /// Use the in-process mock scorer with this seed instead of HTTP.
    #[arg(long)]
    mock_seed: Option<u64>,
    /// Scorer base URL; overrides the config.
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "work")]
    work_dir: PathBuf,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    stage: Stage,
    #[arg(long = "in")]
    input: PathBuf,
    /// Kept records manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    decisions: PathBuf,
    /// Defaults to dropped.jsonl next to --out.
    #[arg(long)]
    dropped: Option<PathBuf>,
    /// Defaults to summary.json next to --out.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value = "work")]
    work_dir: PathBuf,
    #[arg(long)]
    skip_on_scorer_error: bool,
    /// Threshold override for the chosen stage, e.g. `aesthetic_min=5.5` or
    /// `brightness=[30,170]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=JSON")]
    overrides: Vec<String>,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args)]
struct StratifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write the stratification decisions.
    #[arg(long)]
    decisions: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Aesthetic histogram bin width.
    #[arg(long, default_value_t = 0.1)]
    aesthetic_bin: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    P256,
    P320,
}

#[derive(Subcommand)]
enum GeomCommand {
    /// Latent shape of a video.
    Shape {
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
    },
    /// Tile plan for a video (encoder, pixels) or its latent (decoder).
    Tiles {
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, value_enum, default_value = "encoder")]
        side: SideArg,
        /// Use a built-in tiling instead of the configured one.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Check that clips can feed the model at a stage.
    Check {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        model_frames: Option<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Encoder,
    Decoder,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Io => 2,
        ErrorClass::Scorer => 3,
        ErrorClass::Validation => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Usage("--workers must be >= 1".into()));
        }
        cfg.workers = w;
    }
    Ok(cfg)
}

fn make_scorer(cfg: &RunConfig, args: &ScorerArgs) -> Box<dyn Scorer> {
    if let Some(seed) = args.mock_seed {
        return Box::new(MockScorer::new(seed));
    }
    let mut sc = cfg.scorer.clone();
    if let Some(e) = &args.endpoint {
        sc.endpoint = e.clone();
    }
    Box::new(HttpScorer::new(sc))
}

fn run(cli: Cli) -> Result<String> {
    let cfg = load_config(&cli)?;
    let exec = Executor::with_workers(cfg.workers);
    let summary = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &cfg)?,
        Command::Segment(a) => cmd_segment(a, &cfg)?,
        Command::Score(a) => {
            let scorer = make_scorer(&cfg, &a.scorer);
            let records = manifest::load_manifest(&a.input)?;
            let pcfg = cfg.pipeline(Stage::T2vPretrain360p, &a.work_dir);
            let scored = Pipeline::new(&pcfg, scorer.as_ref(), &exec).score(records)?;
            manifest::write_manifest(&scored, &a.out)?;
            json!({"command": "score", "records": scored.len()})
        }
        Command::Filter(a) => cmd_filter(a, cfg, &exec)?,
        Command::Stratify(a) => {
            let records = manifest::load_manifest(&a.input)?;
            let result = stratify::assign_all(&records, &cfg.stages, &exec);
            let summary = stratify::emit_stage_manifests(&result.assignments, &records, &a.out_dir)?;
            if let Some(p) = &a.decisions {
                manifest::write_decisions(&result.decisions, p)?;
            }
            json!({"command": "stratify", "records": summary.records, "counts": summary.counts, "unassigned": summary.unassigned})
        }
        Command::Stats(a) => {
            if !(a.aesthetic_bin.is_finite() && a.aesthetic_bin > 0.0) {
                return Err(Error::Usage("--aesthetic-bin must be > 0".into()));
            }
            let records = manifest::load_manifest(&a.input)?;
            let mut specs = stats::default_specs();
            specs[0].edges = stats::uniform_edges(0.0, 10.0, a.aesthetic_bin);
            let report = stats::compute_report(&records, &specs, &exec).map_err(|e| Error::Validation(e.to_string()))?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(a.out_dir.display().to_string(), e))?;
            let (j, c) = (a.out_dir.join("report.json"), a.out_dir.join("histograms.csv"));
            stats::emit_report(&report, &j, &c).map_err(|e| Error::io(a.out_dir.display().to_string(), e))?;
            json!({"command": "stats", "records": report.records, "duration_buckets": report.duration_buckets})
        }
        Command::Geom { command } => return cmd_geom(command, &cfg),
        Command::MockScorer(a) => {
            let handle = scorers::serve_mock(a.port, a.seed)?;
            println!("{}", json!({"command": "mock-scorer", "endpoint": handle.endpoint(), "seed": a.seed}));
            handle.wait();
            json!({"command": "mock-scorer", "stopped": true})
        }
    };
    Ok(summary.to_string())
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            for entry in entries {
                let path = entry.map_err(|e| Error::io(p.display().to_string(), e))?.path();
                if path.is_file() {
                    files.push(path);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    Ok(files)
}

fn item_from_pack(id: String, path: &Path, pack: &FramePack, source: &str) -> MediaItem {
    let path = path.to_string_lossy().into_owned();
    let mut item = if pack.frame_count() > 1 || pack.fps_num > 0 {
        MediaItem::video(id, path, pack.width, pack.height, pack.fps(), pack.frame_count() as u64)
    } else {
        MediaItem::image(id, path, pack.width, pack.height)
    };
    item.source = source.to_string();
    item
}

fn cmd_ingest(a: &IngestArgs, cfg: &RunConfig) -> Result<Value> {
    let files = collect_inputs(&a.inputs)?;
    let mut records = Vec::with_capacity(files.len());
    for f in &files {
        let pack = ingest::load_media(f, &cfg.decode_template, a.fps)?;
        let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let source = a.source.clone().unwrap_or_else(|| id.clone());
        records.push(Record::Item(item_from_pack(id, f, &pack, &source)));
    }
    records.sort_by(|x, y| x.id().cmp(y.id()));
    manifest::write_manifest(&records, &a.out)?;
    let videos = records.iter().filter(|r| r.is_raw_video()).count();
    Ok(json!({"command": "ingest", "items": records.len(), "videos": videos, "images": records.len() - videos}))
}

fn cmd_segment(a: &SegmentArgs, cfg: &RunConfig) -> Result<Value> {
    let records = manifest::load_manifest(&a.input)?;
    let dir = a.work_dir.join("clips");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut clips = Vec::new();
    let mut videos = 0;
    for r in &records {
        let Record::Item(m) = r else { continue };
        if !r.is_raw_video() {
            continue;
        }
        videos += 1;
        let fps = m.fps.map_or(30, |f| f.round().max(1.0) as u32);
        let pack = ingest::load_media(Path::new(&m.path), &cfg.decode_template, fps)?;
        let curve = scenedetect::content_curve(&pack)?;
        let cuts = scenedetect::detect_cuts(&curve, &cfg.segmenter);
        let mut parent = m.clone();
        parent.frame_count = Some(pack.frame_count() as u64);
        if pack.fps() > 0.0 {
            parent.fps = Some(pack.fps());
        }
        for mut clip in scenedetect::extract_clips(&parent, &cuts, &cfg.segmenter) {
            let path = dir.join(format!("{}.fpk", clip.id));
            ingest::write_framepack(&pack.slice(clip.span[0] as usize, clip.span[1] as usize)?, &path)?;
            clip.path = Some(path.to_string_lossy().into_owned());
            clips.push(Record::Clip(clip));
        }
    }
    clips.sort_by(|x, y| x.id().cmp(y.id()));
    manifest::write_manifest(&clips, &a.out)?;
    Ok(json!({"command": "segment", "videos": videos, "clips": clips.len()}))
}

fn cmd_filter(a: &FilterArgs, mut cfg: RunConfig, exec: &Executor) -> Result<Value> {
    if !a.overrides.is_empty() {
        let mut stages = serde_json::to_value(&cfg.stages).expect("stages serialize");
        for o in &a.overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            let value: Value = serde_json::from_str(raw).map_err(|e| Error::Usage(format!("--set {key}: {e}")))?;
            deep_merge(&mut stages, json!({ a.stage.name(): { key: value } }));
        }
        cfg.stages = serde_json::from_value(stages).map_err(|e| Error::Validation(format!("--set: {e}")))?;
        cfg.validate()?;
    }
    cfg.skip_on_scorer_error |= a.skip_on_scorer_error;
    let scorer = make_scorer(&cfg, &a.scorer);
    let records = manifest::load_manifest(&a.input)?;
    let pcfg = cfg.pipeline(a.stage, &a.work_dir);
    let outcome = Pipeline::new(&pcfg, scorer.as_ref(), exec).run(records)?;
    let dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let paths = OutputPaths {
        kept: a.out.clone(),
        decisions: a.decisions.clone(),
        dropped: a.dropped.clone().unwrap_or_else(|| dir.join("dropped.jsonl")),
        summary: a.summary.clone().unwrap_or_else(|| dir.join("summary.json")),
    };
    outcome.write(&paths)?;
    let mut v = serde_json::to_value(&outcome.summary).expect("summary serializes");
    v["command"] = json!("filter");
    Ok(v)
}

fn cmd_geom(command: &GeomCommand, cfg: &RunConfig) -> Result<String> {
    match command {
        GeomCommand::Shape { frames, width, height } => {
            let shape = geometry::latent_shape(*frames, *height, *width, &cfg.geometry)?;
            Ok(serde_json::to_string(&shape).expect("shape serializes"))
        }
        GeomCommand::Tiles { frames, width, height, side, preset } => {
            let g = match preset {
                Some(Preset::P256) => GeometryConfig::p256(),
                Some(Preset::P320) => GeometryConfig::p320(),
                None => cfg.geometry.clone(),
            };
            let (side, dims) = match side {
                SideArg::Encoder => (Side::Encoder, [*frames, *height, *width]),
                SideArg::Decoder => {
                    let s = geometry::latent_shape(*frames, *height, *width, &g)?;
                    (Side::Decoder, [s.t, s.h, s.w])
                }
            };
            let plan = geometry::plan_tiles(dims, &g, side)?;
            Ok(json!({"side": side, "extents": plan.extents, "tiles": plan.tile_count(), "axes": plan.axes}).to_string())
        }
        GeomCommand::Check { input, stage, model_frames } => {
            let records = manifest::load_manifest(input)?;
            let mut params = CompatParams::for_stage(*stage);
            if let Some(n) = model_frames {
                params.model_frames = *n;
            }
            let thresholds = cfg.stages.get(*stage);
            let reports = records
                .iter()
                .map(|r| geometry::check_compat(r, thresholds, params))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let ok = reports.iter().filter(|r| r.ok).count();
            Ok(json!({"command": "geom check", "stage": stage, "ok": ok, "failed": reports.len() - ok, "reports": reports}).to_string())
        }
    }
}
