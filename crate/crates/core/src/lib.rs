//! Dataset curation engine for text-to-image and text-to-video training data.
//!
//! The crate covers the whole path from raw media to per-stage training
//! manifests:
//!
//! * [`ingest`] reads and writes raw frame containers and shells out to an
//!   external decoder for everything else.
//! * [`scenedetect`] splits raw videos into single-scene clips.
//! * [`metrics`] holds the built-in, dependency-free measurements.
//! * [`scorers`] talks to model-backed scoring services over HTTP/JSON and
//!   ships a deterministic mock of that service.
//! * [`filterpipe`] runs the staged filtering funnel and records an audit
//!   trail for every decision.
//! * [`annotate`], [`stratify`] and [`stats`] assemble captions, assign
//!   records to training stages and summarize the result.
//! * [`geometry`] plans latent shapes, spatio-temporal tiles and blend
//!   weights for the generation model's autoencoder.
//!
//! Data-parallel loops go through [`exec::Executor`], which uses rayon when the
//! `parallel` feature is enabled and falls back to a plain sequential loop
//! otherwise. Results never depend on the executor in use.

pub mod annotate;
pub mod config;
pub mod error;
pub mod exec;
pub mod filterpipe;
pub mod geometry;
pub mod ingest;
pub mod manifest;
pub mod metrics;
pub mod numfmt;
pub mod scenedetect;
pub mod scorers;
pub mod stats;
pub mod stratify;

pub use error::{Error, ErrorClass, Result};
pub use exec::Executor;
