use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{ScoreRequest, ScoreResponse, Scorer, ScorerError, Task};

pub const EMBEDDING_DIM: usize = 16;

fn digest_head(task: Task, seed: u64, payload: &[u8], counter: Option<u32>) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(task.name().as_bytes());
    hasher.update(b":");
    hasher.update(seed.to_le_bytes());
    hasher.update(payload);
    if let Some(c) = counter {
        hasher.update(c.to_le_bytes());
    }
    let out = hasher.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Maps a hash head onto `[0, 1)`. Only the top 53 bits are used so the
/// conversion is exact and the upper bound is never reached.
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `lo + u·(hi − lo)`, kept strictly below `hi` when rounding would reach it.
fn affine(u: f64, lo: f64, hi: f64) -> f64 {
    let v = lo + u * (hi - lo);
    if v < hi {
        v
    } else {
        hi.next_down()
    }
}

/// The uniform variate the mock derives from `(task, payload, seed)`.
pub fn mock_u(task: Task, payload: &[u8], seed: u64) -> f64 {
    unit(digest_head(task, seed, payload, None))
}

/// Deterministic response for `task` on `payload`. Media tasks hash the
/// file bytes, text-only tasks the UTF-8 text.
pub fn mock_value(task: Task, payload: &[u8], seed: u64) -> ScoreResponse {
    let h = digest_head(task, seed, payload, None);
    if let Some((lo, hi)) = task.mock_range() {
        return ScoreResponse::value(affine(unit(h), lo, hi));
    }
    match task {
        Task::CaptionCoarse | Task::CaptionFine => {
            let hex = format!("{h:016x}");
            ScoreResponse::caption(format!("mock caption {}", &hex[..8]), vec!["mock".to_string()])
        }
        _ => {
            let raw: Vec<f64> = (0..EMBEDDING_DIM as u32).map(|i| unit(digest_head(task, seed, payload, Some(i)))).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            // all 16 variates being exactly zero is not a practical concern
            let norm = if norm > 0.0 { norm } else { 1.0 };
            ScoreResponse::embedding(raw.into_iter().map(|v| v / norm).collect())
        }
    }
}

/// In-process mock. Reads media from the path in each request, so it sees
/// exactly the bytes the HTTP mock would.
#[derive(Debug, Default)]
pub struct MockScorer {
    seed: u64,
    log: Mutex<Vec<ScoreRequest>>,
}

impl MockScorer {
    pub fn new(seed: u64) -> Self {
        MockScorer { seed, log: Mutex::new(Vec::new()) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ScoreRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    /// Answers a request the way the server does: protocol-level failures
    /// become `ok=false` responses rather than errors.
    pub fn respond(&self, request: &ScoreRequest) -> ScoreResponse {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(request.clone());
        if let Err(e) = request.validate() {
            return ScoreResponse::error("bad_request", e.to_string());
        }
        let mut payload = Vec::new();
        if let Some(media) = &request.media {
            match std::fs::read(&media.path) {
                Ok(bytes) => payload = bytes,
                Err(e) => return ScoreResponse::error("media_unreadable", format!("{}: {e}", media.path)),
            }
        }
        if let Some(text) = &request.text {
            payload.extend_from_slice(text.as_bytes());
        }
        mock_value(request.task, &payload, self.seed)
    }
}

impl Scorer for MockScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        request.validate()?;
        self.respond(request).check(request.task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::MediaKind;

    #[test]
    fn deterministic() {
        for task in Task::ALL {
            assert_eq!(mock_value(task, b"abc", 7), mock_value(task, b"abc", 7));
        }
        assert_ne!(mock_value(Task::Aesthetic, b"abc", 7), mock_value(Task::Aesthetic, b"abc", 8));
        assert_ne!(mock_value(Task::Aesthetic, b"abc", 7), mock_value(Task::Dover, b"abc", 7));
    }

    #[test]
    fn unit_endpoints() {
        assert_eq!(unit(0), 0.0);
        assert!(unit(u64::MAX) < 1.0);
        assert_eq!(3.0 + unit(0) * 4.0, 3.0);
        assert!(affine(unit(u64::MAX), 3.0, 7.0) < 7.0);
        assert_eq!(affine(unit(0), 3.0, 7.0), 3.0);
    }

    #[test]
    fn matches_independent_hash() {
        // recompute the digest through a differently structured path
        let mut pre = b"aesthetic:".to_vec();
        pre.extend(42u64.to_le_bytes());
        pre.extend(b"payload");
        let d = Sha256::digest(&pre);
        let h = d[..8].iter().fold(0u64, |acc, &b| (acc << 8) | u64::from(b));
        let u = (h >> 11) as f64 / 9007199254740992.0;
        assert_eq!(mock_value(Task::Aesthetic, b"payload", 42).value, Some(3.0 + 4.0 * u));
        let cap = mock_value(Task::CaptionCoarse, b"payload", 42);
        let mut pre = b"caption_coarse:".to_vec();
        pre.extend(42u64.to_le_bytes());
        pre.extend(b"payload");
        let d = Sha256::digest(&pre);
        let hex: String = d[..4].iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(cap.text.unwrap(), format!("mock caption {hex}"));
        assert_eq!(cap.tags.unwrap(), vec!["mock"]);
    }

    #[test]
    fn values_within_ranges() {
        for i in 0..2000u32 {
            let payload = i.to_be_bytes();
            for task in Task::ALL {
                let r = mock_value(task, &payload, u64::from(i) * 31);
                let r = r.check(task).unwrap();
                if let Some((lo, hi)) = task.mock_range() {
                    let v = r.value.unwrap();
                    assert!(v >= lo && v < hi, "{task} {v}");
                }
                if let Some(e) = r.embedding {
                    assert_eq!(e.len(), EMBEDDING_DIM);
                    let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!((n - 1.0).abs() < 1e-9);
                    assert!(e.iter().all(|v| *v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn unreadable_media_and_log() {
        let m = MockScorer::new(1);
        let req = ScoreRequest::media(Task::Dover, MediaKind::Video, "/nonexistent/x.fpk");
        let r = m.respond(&req);
        assert!(!r.ok);
        assert_eq!(r.error.unwrap().code, "media_unreadable");
        assert!(matches!(m.score(&req), Err(ScorerError::Remote { .. })));
        assert_eq!(m.request_count(), 2);
    }

    #[test]
    fn media_then_text_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fpk");
        std::fs::write(&p, b"MEDIA").unwrap();
        let m = MockScorer::new(5);
        let req = ScoreRequest::media(Task::CaptionFine, MediaKind::Video, p.to_str().unwrap()).with_text("ctx");
        assert_eq!(m.respond(&req), mock_value(Task::CaptionFine, b"MEDIActx", 5));
    }
}
