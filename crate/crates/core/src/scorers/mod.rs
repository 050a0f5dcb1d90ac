//! Model-backed scoring over a single HTTP/JSON endpoint.
//!
//! Every metric the crate cannot compute itself (aesthetics, clarity,
//! perceptual consistency, motion, text/watermark coverage, captions,
//! embeddings) is requested as a [`ScoreRequest`] and answered with a
//! [`ScoreResponse`]. Media is referenced by a path to a FramePack on storage
//! shared with the service.
//!
//! [`MockScorer`] answers the same requests deterministically from a content
//! hash. [`serve_mock`] exposes it over HTTP, [`HttpScorer`] is the client.

mod client;
mod mock;
mod protocol;
mod server;

pub use client::{HttpScorer, ScorerConfig};
pub use mock::{mock_u, mock_value, MockScorer, EMBEDDING_DIM};
pub use protocol::{ErrorBody, MediaRef, PayloadFamily, ScoreRequest, ScoreResponse, Task};
pub use server::{serve_mock, serve_mock_on, MockServerHandle};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("scorer reported {code}: {message}")]
    Remote { code: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("failed to bind scorer server: {0}")]
    Bind(String),
}

impl ScorerError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ScorerError::Remote { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Anything that can answer score requests. Implementations must be safe
/// to share between worker threads.
pub trait Scorer: Send + Sync {
    /// Returns a response that passed [`ScoreResponse::check`], or the error.
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (**self).score(request)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (**self).score(request)
    }
}

/// A scorer that refuses everything; useful when every metric is expected
/// to be present already.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineScorer;

impl Scorer for OfflineScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        Err(ScorerError::Transport {
            attempts: 0,
            message: format!("no scorer configured for task {}", request.task.name()),
        })
    }
}
