//! Latent-shape arithmetic, spatio-temporal tiling and frame sampling for the
//! video autoencoder.
//!
//! Volumes are indexed `[t, h, w]`. A [`TilePlan`] holds one list of spans per
//! axis; tiles are the Cartesian product, enumerated with `t` outermost.
//! Each axis gets linear blend ramps over the actual overlap with its
//! neighbours, normalized so covering weights sum to one per index. The
//! per-voxel weight is the product over axes, so the partition of unity
//! carries over to the whole volume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Executor;
use crate::filterpipe::{Stage, StageThresholds};
use crate::manifest::Record;

pub const AXES: [&str; 3] = ["T", "H", "W"];

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("{axis} extent {extent} is not divisible by stride {stride}")]
    NotDivisible { axis: &'static str, extent: usize, stride: usize },
    #[error("tile {tile} is larger than extent {extent}")]
    TileTooLarge { extent: usize, tile: usize },
    #[error("overlap {overlap} must be smaller than tile {tile}")]
    BadOverlap { tile: usize, overlap: usize },
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("invalid geometry config: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: [usize; 3], actual: [usize; 3] },
    #[error("plans do not have the same tile layout")]
    PlanMismatch,
    #[error("volume data has {actual} values, shape needs {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("source fps {source_fps} is not a multiple of target fps {target}")]
    FpsNotDivisible { source_fps: u32, target: u32 },
}

/// How the configured overlap triple is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// `overlap` is the number of shared voxels; step = tile − overlap.
    #[default]
    OverlapAmount,
    /// `overlap` is the step between tile starts.
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Encoder,
    Decoder,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub latent_channels: usize,
    /// Temporal, height and width downsampling factors.
    pub strides: [usize; 3],
    /// Encoder tile length in frames.
    pub tile_frames: usize,
    /// Encoder spatial tile size `p` in pixels.
    pub tile_pixels: usize,
    /// Pixel-space overlap `(v_T, v_H, v_W)`.
    pub overlap: [usize; 3],
    pub overlap_mode: OverlapMode,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig::p320()
    }
}

impl GeometryConfig {
    /// 720p tiling: p = 320, overlap 8×80×120.
    pub fn p320() -> Self {
        GeometryConfig {
            latent_channels: 4,
            strides: [4, 8, 8],
            tile_frames: 24,
            tile_pixels: 320,
            overlap: [8, 80, 120],
            overlap_mode: OverlapMode::OverlapAmount,
        }
    }

    /// 368p tiling: p = 256, overlap 8×64×144.
    pub fn p256() -> Self {
        GeometryConfig { tile_pixels: 256, overlap: [8, 64, 144], ..GeometryConfig::p320() }
    }

    pub fn encoder_tile(&self) -> [usize; 3] {
        [self.tile_frames, self.tile_pixels, self.tile_pixels]
    }

    pub fn decoder_tile(&self) -> [usize; 3] {
        let e = self.encoder_tile();
        [e[0] / self.strides[0], e[1] / self.strides[1], e[2] / self.strides[2]]
    }

    /// Tile extent and overlap amount per axis for one side.
    pub fn axis_params(&self, side: Side) -> [(usize, usize); 3] {
        let (tile, div) = match side {
            Side::Encoder => (self.encoder_tile(), [1, 1, 1]),
            Side::Decoder => (self.decoder_tile(), self.strides),
        };
        std::array::from_fn(|a| {
            let v = self.overlap[a] / div[a];
            let overlap = match self.overlap_mode {
                OverlapMode::OverlapAmount => v,
                OverlapMode::Step => tile[a].saturating_sub(v),
            };
            (tile[a], overlap)
        })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let cfg = |m: String| Err(GeometryError::Config(m));
        if self.latent_channels == 0 {
            return Err(GeometryError::Zero("latent_channels"));
        }
        if self.strides.contains(&0) {
            return Err(GeometryError::Zero("strides"));
        }
        if self.tile_frames == 0 || self.tile_pixels == 0 {
            return Err(GeometryError::Zero("tile size"));
        }
        let tile = self.encoder_tile();
        for a in 0..3 {
            if tile[a] % self.strides[a] != 0 {
                return cfg(format!("{} tile {} not divisible by stride {}", AXES[a], tile[a], self.strides[a]));
            }
            if self.overlap[a] % self.strides[a] != 0 {
                return cfg(format!("{} overlap {} not divisible by stride {}", AXES[a], self.overlap[a], self.strides[a]));
            }
            match self.overlap_mode {
                OverlapMode::OverlapAmount if self.overlap[a] >= tile[a] => {
                    return cfg(format!("{} overlap {} must be below tile {}", AXES[a], self.overlap[a], tile[a]));
                }
                OverlapMode::Step if self.overlap[a] == 0 || self.overlap[a] > tile[a] => {
                    return cfg(format!("{} step {} must be in 1..={}", AXES[a], self.overlap[a], tile[a]));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

/// `(T/S_T, C_l, H/S_H, W/S_W)`; every axis must divide exactly.
pub fn latent_shape(t: usize, h: usize, w: usize, config: &GeometryConfig) -> Result<LatentShape, GeometryError> {
    let dims = [t, h, w];
    for a in 0..3 {
        let s = config.strides[a];
        if s == 0 {
            return Err(GeometryError::Zero("strides"));
        }
        if dims[a] % s != 0 {
            return Err(GeometryError::NotDivisible { axis: AXES[a], extent: dims[a], stride: s });
        }
    }
    Ok(LatentShape { t: t / config.strides[0], c: config.latent_channels, h: h / config.strides[1], w: w / config.strides[2] })
}

/// Half-open `[start, end)`; serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, x: usize) -> bool {
        self.start <= x && x < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// Places full-size tiles every `tile - overlap`, then end-aligns one more
/// tile if the regular grid stops short of `extent`.
pub fn plan_axis(extent: usize, tile: usize, overlap: usize) -> Result<Vec<Span>, GeometryError> {
    if tile == 0 {
        return Err(GeometryError::Zero("tile"));
    }
    if tile > extent {
        return Err(GeometryError::TileTooLarge { extent, tile });
    }
    if overlap >= tile {
        return Err(GeometryError::BadOverlap { tile, overlap });
    }
    let step = tile - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start + tile <= extent {
        spans.push(Span { start, end: start + tile });
        start += step;
    }
    if spans.last().is_some_and(|s| s.end < extent) {
        spans.push(Span { start: extent - tile, end: extent });
    }
    Ok(spans)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub extents: [usize; 3],
    pub axes: [Vec<Span>; 3],
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn layout(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.axes[a].len())
    }

    /// Per-axis span indices of tile `n` in enumeration order.
    pub fn tile_index(&self, n: usize) -> [usize; 3] {
        let [_, nh, nw] = self.layout();
        [n / (nh * nw), (n / nw) % nh, n % nw]
    }

    pub fn tile_spans(&self, n: usize) -> [Span; 3] {
        let idx = self.tile_index(n);
        std::array::from_fn(|a| self.axes[a][idx[a]])
    }

    /// The same layout with every bound multiplied by `num / den`; fails if
    /// any bound does not divide.
    pub fn rescale(&self, num: [usize; 3], den: [usize; 3]) -> Result<TilePlan, GeometryError> {
        let mut axes: [Vec<Span>; 3] = Default::default();
        let mut extents = [0; 3];
        for a in 0..3 {
            if den[a] == 0 || num[a] == 0 {
                return Err(GeometryError::Zero("scale"));
            }
            let f = |x: usize| {
                let y = x * num[a];
                if y % den[a] == 0 {
                    Ok(y / den[a])
                } else {
                    Err(GeometryError::NotDivisible { axis: AXES[a], extent: y, stride: den[a] })
                }
            };
            extents[a] = f(self.extents[a])?;
            axes[a] = self.axes[a].iter().map(|s| Ok(Span { start: f(s.start)?, end: f(s.end)? })).collect::<Result<_, _>>()?;
        }
        Ok(TilePlan { extents, axes })
    }
}

/// Tiles a `[T, H, W]` volume measured in the side's units (pixels for the
/// encoder, latent voxels for the decoder). Axes shorter than the tile get
/// a single tile spanning the whole axis.
pub fn plan_tiles(dims: [usize; 3], config: &GeometryConfig, side: Side) -> Result<TilePlan, GeometryError> {
    config.validate()?;
    let params = config.axis_params(side);
    let mut axes: [Vec<Span>; 3] = Default::default();
    for a in 0..3 {
        if dims[a] == 0 {
            return Err(GeometryError::Zero("extent"));
        }
        let (tile, overlap) = params[a];
        axes[a] = if tile >= dims[a] { vec![Span { start: 0, end: dims[a] }] } else { plan_axis(dims[a], tile, overlap)? };
    }
    Ok(TilePlan { extents: dims, axes })
}

/// Normalized per-axis weights for each span of a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights {
    plan: TilePlan,
    axes: [Vec<Vec<f64>>; 3],
}

/// Unnormalized ramp for span `k`: `(j+1)/(o+1)` rising over the overlap
/// `o` with each neighbour, 1 in the interior.
fn ramp(spans: &[Span], k: usize) -> Vec<f64> {
    let s = spans[k];
    let len = s.len();
    let left = if k > 0 { spans[k - 1].end.saturating_sub(s.start).min(len) } else { 0 };
    let right = if k + 1 < spans.len() { s.end.saturating_sub(spans[k + 1].start).min(len) } else { 0 };
    (0..len)
        .map(|i| {
            let mut w: f64 = 1.0;
            if i < left {
                w = w.min((i + 1) as f64 / (left + 1) as f64);
            }
            let r = len - 1 - i;
            if r < right {
                w = w.min((r + 1) as f64 / (right + 1) as f64);
            }
            w
        })
        .collect()
}

fn axis_weights(extent: usize, spans: &[Span]) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..spans.len()).map(|k| ramp(spans, k)).collect();
    let mut den = vec![0.0; extent];
    for (s, r) in spans.iter().zip(&raw) {
        for (i, w) in r.iter().enumerate() {
            den[s.start + i] += w;
        }
    }
    spans
        .iter()
        .zip(raw)
        .map(|(s, r)| r.into_iter().enumerate().map(|(i, w)| w / den[s.start + i]).collect())
        .collect()
}

pub fn blend_weights(plan: &TilePlan) -> BlendWeights {
    let axes = std::array::from_fn(|a| axis_weights(plan.extents[a], &plan.axes[a]));
    BlendWeights { plan: plan.clone(), axes }
}

impl BlendWeights {
    pub fn plan(&self) -> &TilePlan {
        &self.plan
    }

    /// Normalized weights of span `k` on `axis`, one per index of the span.
    pub fn axis(&self, axis: usize, k: usize) -> &[f64] {
        &self.axes[axis][k]
    }

    /// Weight of tile `n` at the local offset `local` inside it.
    pub fn voxel_weight(&self, n: usize, local: [usize; 3]) -> f64 {
        let idx = self.plan.tile_index(n);
        (0..3).map(|a| self.axes[a][idx[a]][local[a]]).product()
    }

    /// Sum over all covering tiles of the weight at a global voxel.
    pub fn coverage_sum(&self, voxel: [usize; 3]) -> f64 {
        (0..self.plan.tile_count())
            .filter_map(|n| {
                let spans = self.plan.tile_spans(n);
                (0..3)
                    .all(|a| spans[a].contains(voxel[a]))
                    .then(|| self.voxel_weight(n, std::array::from_fn(|a| voxel[a] - spans[a].start)))
            })
            .sum()
    }
}

/// Dense `[T, H, W]` volume of f64, row-major with `w` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self, GeometryError> {
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(GeometryError::DataLength { expected, actual: data.len() });
        }
        Ok(Volume { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Volume { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut([usize; 3]) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for t in 0..dims[0] {
            for h in 0..dims[1] {
                for w in 0..dims[2] {
                    data.push(f([t, h, w]));
                }
            }
        }
        Volume { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, [t, h, w]: [usize; 3]) -> usize {
        (t * self.dims[1] + h) * self.dims[2] + w
    }

    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 3], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn crop(&self, spans: [Span; 3]) -> Volume {
        let dims = [spans[0].len(), spans[1].len(), spans[2].len()];
        let mut data = Vec::with_capacity(dims.iter().product());
        for t in spans[0].start..spans[0].end {
            for h in spans[1].start..spans[1].end {
                let row = self.offset([t, h, spans[2].start]);
                data.extend_from_slice(&self.data[row..row + dims[2]]);
            }
        }
        Volume { dims, data }
    }

    pub fn max_abs_diff(&self, other: &Volume) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Transforms each tile of `input` (laid out by `plan`) and blends the
/// results with `weights`, whose plan describes the output layout: the same
/// plan for shape-preserving transforms, a rescaled one otherwise.
///
/// Tiles are transformed concurrently in bounded batches; accumulation runs
/// in tile order, so the result does not depend on the executor.
pub fn tiled_map<F>(input: &Volume, plan: &TilePlan, weights: &BlendWeights, exec: &Executor, transform: F) -> Result<Volume, GeometryError>
where
    F: Fn(&Volume) -> Volume + Sync + Send,
{
    if input.dims() != plan.extents {
        return Err(GeometryError::ShapeMismatch { expected: plan.extents, actual: input.dims() });
    }
    let out_plan = weights.plan();
    if out_plan.layout() != plan.layout() {
        return Err(GeometryError::PlanMismatch);
    }
    let mut out = Volume::zeros(out_plan.extents);
    let batch = exec.workers().max(1) * 2;
    let total = plan.tile_count();
    let mut first = 0;
    while first < total {
        let n = batch.min(total - first);
        let results = exec.map_range(n, |i| {
            let tile = first + i;
            let produced = transform(&input.crop(plan.tile_spans(tile)));
            let spans = out_plan.tile_spans(tile);
            let expected = [spans[0].len(), spans[1].len(), spans[2].len()];
            if produced.dims() != expected {
                return Err(GeometryError::ShapeMismatch { expected, actual: produced.dims() });
            }
            Ok(produced)
        });
        for (i, produced) in results.into_iter().enumerate() {
            let produced = produced?;
            let tile = first + i;
            let spans = out_plan.tile_spans(tile);
            let idx = out_plan.tile_index(tile);
            let [wt, wh, ww] = [&weights.axes[0][idx[0]], &weights.axes[1][idx[1]], &weights.axes[2][idx[2]]];
            let dims = produced.dims();
            for t in 0..dims[0] {
                for h in 0..dims[1] {
                    let wth = wt[t] * wh[h];
                    let src = (t * dims[1] + h) * dims[2];
                    let dst = out.offset([spans[0].start + t, spans[1].start + h, spans[2].start]);
                    for w in 0..dims[2] {
                        out.data[dst + w] += wth * ww[w] * produced.data[src + w];
                    }
                }
            }
        }
        first += n;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub stride: u32,
    pub source_frames_needed: u64,
    pub window_s: f64,
}

/// Source frames needed to take `model_frames` frames every
/// `source_fps / target_fps` frames: indices 0, stride, …, stride·(N−1).
pub fn sampling_plan(source_fps: u32, target_fps: u32, model_frames: u32) -> Result<SamplingPlan, GeometryError> {
    if source_fps == 0 || target_fps == 0 {
        return Err(GeometryError::Zero("fps"));
    }
    if model_frames == 0 {
        return Err(GeometryError::Zero("model_frames"));
    }
    if source_fps % target_fps != 0 {
        return Err(GeometryError::FpsNotDivisible { source_fps, target: target_fps });
    }
    let stride = source_fps / target_fps;
    let needed = u64::from(stride) * u64::from(model_frames) - u64::from(stride - 1);
    Ok(SamplingPlan { stride, source_frames_needed: needed, window_s: (needed - 1) as f64 / f64::from(source_fps) })
}

/// Sampling parameters for [`check_compat`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatParams {
    pub source_fps: u32,
    pub target_fps: u32,
    pub model_frames: u32,
}

impl CompatParams {
    /// Frame counts the generation model consumes at each stage.
    pub fn for_stage(stage: Stage) -> Self {
        let model_frames = match stage {
            Stage::T2iPretrain => 1,
            Stage::T2vPretrain360p | Stage::T2vPretrain720p => 40,
            Stage::T2vFinetune => 88,
        };
        CompatParams { source_fps: 30, target_fps: 15, model_frames }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatReport {
    pub id: String,
    pub ok: bool,
    pub reasons: Vec<String>,
    pub frames_needed: u64,
    pub frames_available: u64,
}

/// Whether `record` can feed the model at `stage`: enough source frames for
/// one sampling window and a post-crop resolution meeting the stage minimum.
pub fn check_compat(record: &Record, thresholds: &StageThresholds, params: CompatParams) -> Result<CompatReport, GeometryError> {
    let plan = sampling_plan(params.source_fps, params.target_fps, params.model_frames)?;
    let mut reasons = Vec::new();
    let available = match record.duration_s() {
        Some(d) => (d * f64::from(params.source_fps) + 1e-6).floor().max(0.0) as u64,
        None => 1,
    };
    if let Some(fps) = record.fps() {
        if fps + 0.5 < f64::from(params.source_fps) {
            reasons.push(format!("fps {fps} is below the sampling source rate {}", params.source_fps));
        }
    }
    if available < plan.source_frames_needed {
        reasons.push(format!("{available} frames available, {} needed", plan.source_frames_needed));
    }
    let (w, h) = match record {
        Record::Clip(c) => c.crop.map_or((c.width, c.height), |r| (r.w, r.h)),
        Record::Item(m) => crate::filterpipe::item_crop(m).map_or((m.width, m.height), |r| (r.w, r.h)),
    };
    if w < thresholds.min_width || h < thresholds.min_height {
        reasons.push(format!("resolution {w}x{h} below {}x{}", thresholds.min_width, thresholds.min_height));
    }
    Ok(CompatReport {
        id: record.id().to_string(),
        ok: reasons.is_empty(),
        reasons,
        frames_needed: plan.source_frames_needed,
        frames_available: available,
    })
}
