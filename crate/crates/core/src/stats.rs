//! Dataset statistics: duration buckets, metric histograms and tag counts.
//!
//! All bins are left-closed and right-open except the last, which is closed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Executor;
use crate::manifest::{MediaKind, MetricVector, Record};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("histogram for {key} needs at least 2 edges, got {got}")]
    TooFewEdges { key: String, got: usize },
    #[error("histogram edges for {key} must be finite and strictly ascending")]
    EdgesNotAscending { key: String },
    #[error("unknown metric key {0}")]
    UnknownKey(String),
}

/// Index of the bin holding `v`, or `Err(below)` when outside.
fn locate(edges: &[f64], v: f64) -> Result<usize, bool> {
    let (first, last) = (edges[0], edges[edges.len() - 1]);
    if v < first {
        return Err(true);
    }
    if v > last || v.is_nan() {
        return Err(false);
    }
    if v == last {
        return Ok(edges.len() - 2);
    }
    // first edge strictly greater than v, minus one
    Ok(edges.partition_point(|&e| e <= v) - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub metric_key: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn empty(metric_key: &str, bin_edges: Vec<f64>) -> Result<Self, StatsError> {
        if bin_edges.len() < 2 {
            return Err(StatsError::TooFewEdges { key: metric_key.to_string(), got: bin_edges.len() });
        }
        if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StatsError::EdgesNotAscending { key: metric_key.to_string() });
        }
        let n = bin_edges.len() - 1;
        Ok(Histogram { metric_key: metric_key.to_string(), bin_edges, counts: vec![0; n], below: 0, above: 0 })
    }

    pub fn add(&mut self, v: f64) {
        match locate(&self.bin_edges, v) {
            Ok(i) => self.counts[i] += 1,
            Err(true) => self.below += 1,
            Err(false) => self.above += 1,
        }
    }

    /// Adds the counts of a histogram with identical edges.
    pub fn merge(mut self, other: &Histogram) -> Self {
        debug_assert_eq!(self.bin_edges, other.bin_edges);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
        self
    }

    pub fn population(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }
}

/// Histogram of `key` over the records that carry it.
pub fn metric_histogram(records: &[Record], key: &str, bin_edges: &[f64]) -> Result<Histogram, StatsError> {
    if !MetricVector::KEYS.contains(&key) {
        return Err(StatsError::UnknownKey(key.to_string()));
    }
    let mut h = Histogram::empty(key, bin_edges.to_vec())?;
    for v in records.iter().filter_map(|r| r.metrics().get(key)) {
        h.add(v);
    }
    Ok(h)
}

/// `n + 1` edges from `lo` to `hi` in steps of `width`, computed by index to
/// avoid accumulated rounding.
pub fn uniform_edges(lo: f64, hi: f64, width: f64) -> Vec<f64> {
    let n = ((hi - lo) / width).round().max(1.0) as usize;
    (0..=n).map(|i| crate::numfmt::round_sig(lo + i as f64 * width)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationBuckets {
    /// `[2, 6)`
    pub short: u64,
    /// `[6, 10)`
    pub medium: u64,
    /// `[10, 16]`
    pub long: u64,
    pub out_of_range: u64,
}

impl DurationBuckets {
    pub fn add(&mut self, d: f64) {
        match d {
            d if (2.0..6.0).contains(&d) => self.short += 1,
            d if (6.0..10.0).contains(&d) => self.medium += 1,
            d if (10.0..=16.0).contains(&d) => self.long += 1,
            _ => self.out_of_range += 1,
        }
    }

    pub fn merge(self, o: DurationBuckets) -> Self {
        DurationBuckets {
            short: self.short + o.short,
            medium: self.medium + o.medium,
            long: self.long + o.long,
            out_of_range: self.out_of_range + o.out_of_range,
        }
    }
}

/// Buckets the durations of video records.
pub fn duration_buckets(records: &[Record]) -> DurationBuckets {
    let mut b = DurationBuckets::default();
    for d in records.iter().filter(|r| r.kind() == MediaKind::Video).filter_map(Record::duration_s) {
        b.add(d);
    }
    b
}

/// Tag counts over coarse captions, most frequent first, ties by name.
pub fn tag_distribution(records: &[Record]) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        if let Some(c) = r.captions() {
            for t in &c.coarse.tags {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    sort_tags(counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn sort_tags(mut v: Vec<(String, u64)>) -> Vec<(String, u64)> {
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagCount {
    pub tag: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub records: u64,
    pub images: u64,
    pub videos: u64,
    pub duration_buckets: DurationBuckets,
    pub histograms: Vec<Histogram>,
    pub tags: Vec<TagCount>,
}

/// Bin layout per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub key: String,
    pub edges: Vec<f64>,
}

/// Default layouts: aesthetic in steps of 0.1, the rest over their natural
/// ranges.
pub fn default_specs() -> Vec<HistogramSpec> {
    let spec = |key: &str, edges: Vec<f64>| HistogramSpec { key: key.to_string(), edges };
    vec![
        spec("aesthetic", uniform_edges(0.0, 10.0, 0.1)),
        spec("brightness", uniform_edges(0.0, 255.0, 5.0)),
        spec("clip_sim", uniform_edges(-1.0, 1.0, 0.02)),
        spec("text_area_pct", uniform_edges(0.0, 1.0, 0.01)),
        spec("duration_s", uniform_edges(0.0, 16.0, 1.0)),
    ]
}

fn value_for(r: &Record, key: &str) -> Option<f64> {
    if key == "duration_s" {
        return r.duration_s().filter(|_| r.kind() == MediaKind::Video);
    }
    r.metrics().get(key)
}

#[derive(Clone)]
struct Acc {
    records: u64,
    images: u64,
    videos: u64,
    buckets: DurationBuckets,
    hists: Vec<Histogram>,
    tags: BTreeMap<String, u64>,
}

impl Acc {
    fn add(mut self, r: &Record) -> Self {
        self.records += 1;
        match r.kind() {
            MediaKind::Image => self.images += 1,
            MediaKind::Video => {
                self.videos += 1;
                if let Some(d) = r.duration_s() {
                    self.buckets.add(d);
                }
            }
        }
        for h in &mut self.hists {
            if let Some(v) = value_for(r, &h.metric_key) {
                h.add(v);
            }
        }
        if let Some(c) = r.captions() {
            for t in &c.coarse.tags {
                *self.tags.entry(t.clone()).or_default() += 1;
            }
        }
        self
    }

    fn merge(mut self, o: Acc) -> Self {
        self.records += o.records;
        self.images += o.images;
        self.videos += o.videos;
        self.buckets = self.buckets.merge(o.buckets);
        self.hists = self.hists.into_iter().zip(&o.hists).map(|(a, b)| a.merge(b)).collect();
        for (k, v) in o.tags {
            *self.tags.entry(k).or_default() += v;
        }
        self
    }
}

/// Everything in one parallel pass.
pub fn compute_report(records: &[Record], specs: &[HistogramSpec], exec: &Executor) -> Result<StatsReport, StatsError> {
    let hists = specs
        .iter()
        .map(|s| {
            if s.key != "duration_s" && !MetricVector::KEYS.contains(&s.key.as_str()) {
                return Err(StatsError::UnknownKey(s.key.clone()));
            }
            Histogram::empty(&s.key, s.edges.clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let identity = Acc { records: 0, images: 0, videos: 0, buckets: DurationBuckets::default(), hists, tags: BTreeMap::new() };
    let acc = exec.fold(records, || identity.clone(), Acc::add, Acc::merge);
    Ok(StatsReport {
        records: acc.records,
        images: acc.images,
        videos: acc.videos,
        duration_buckets: acc.buckets,
        histograms: acc.hists,
        tags: sort_tags(acc.tags.into_iter().collect()).into_iter().map(|(tag, count)| TagCount { tag, count }).collect(),
    })
}

/// One row per bin: `metric_key,lo,hi,count`.
pub fn histograms_csv(report: &StatsReport) -> String {
    let mut s = String::from("metric_key,lo,hi,count\n");
    for h in &report.histograms {
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", h.metric_key, h.bin_edges[i], h.bin_edges[i + 1], c);
        }
    }
    s
}

/// Writes `report.json` and `histograms.csv`.
pub fn emit_report(report: &StatsReport, json_path: &Path, csv_path: &Path) -> std::io::Result<()> {
    let json = crate::numfmt::canonical_json(report).map_err(std::io::Error::other)?;
    fs::write(json_path, json + "\n")?;
    fs::write(csv_path, histograms_csv(report))
}
