use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScorerError;
use crate::manifest::MediaKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Aesthetic,
    Dover,
    LpipsConsistency,
    UnimatchMotion,
    TextArea,
    WatermarkArea,
    CaptionCoarse,
    CaptionFine,
    EmbedText,
    EmbedImage,
}

/// Which payload fields a successful response carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadFamily {
    Value,
    Caption,
    Embedding,
}

impl Task {
    pub const ALL: [Task; 10] = [
        Task::Aesthetic,
        Task::Dover,
        Task::LpipsConsistency,
        Task::UnimatchMotion,
        Task::TextArea,
        Task::WatermarkArea,
        Task::CaptionCoarse,
        Task::CaptionFine,
        Task::EmbedText,
        Task::EmbedImage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Aesthetic => "aesthetic",
            Task::Dover => "dover",
            Task::LpipsConsistency => "lpips_consistency",
            Task::UnimatchMotion => "unimatch_motion",
            Task::TextArea => "text_area",
            Task::WatermarkArea => "watermark_area",
            Task::CaptionCoarse => "caption_coarse",
            Task::CaptionFine => "caption_fine",
            Task::EmbedText => "embed_text",
            Task::EmbedImage => "embed_image",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn family(self) -> PayloadFamily {
        match self {
            Task::CaptionCoarse | Task::CaptionFine => PayloadFamily::Caption,
            Task::EmbedText | Task::EmbedImage => PayloadFamily::Embedding,
            _ => PayloadFamily::Value,
        }
    }

    /// Output range of the mock scorer for numeric tasks, `[lo, hi)`.
    pub fn mock_range(self) -> Option<(f64, f64)> {
        match self {
            Task::Aesthetic => Some((3.0, 7.0)),
            Task::Dover => Some((0.0, 0.2)),
            Task::LpipsConsistency => Some((0.0, 0.3)),
            Task::UnimatchMotion => Some((0.0, 150.0)),
            Task::TextArea | Task::WatermarkArea => Some((0.0, 0.2)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub kind: MediaKind,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<MediaRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, String>>,
}

impl ScoreRequest {
    pub fn media(task: Task, kind: MediaKind, path: impl Into<String>) -> Self {
        ScoreRequest { task, media: Some(MediaRef { kind, path: path.into() }), text: None, params: None }
    }

    pub fn text(task: Task, text: impl Into<String>) -> Self {
        ScoreRequest { task, media: None, text: Some(text.into()), params: None }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.get_or_insert_with(BTreeMap::new).insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |m: &str| Err(ScorerError::InvalidRequest(format!("{}: {m}", self.task)));
        match self.task {
            Task::EmbedText if self.text.is_none() => bad("embed_text requires text"),
            Task::CaptionFine if self.media.is_none() || self.text.is_none() => bad("caption_fine requires media and text"),
            Task::EmbedText => Ok(()),
            _ if self.media.is_none() => bad("media is required"),
            _ => Ok(()),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        canonical(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl ScoreResponse {
    pub fn value(v: f64) -> Self {
        ScoreResponse { ok: true, value: Some(v), ..Default::default() }
    }

    pub fn caption(text: impl Into<String>, tags: Vec<String>) -> Self {
        ScoreResponse { ok: true, text: Some(text.into()), tags: Some(tags), ..Default::default() }
    }

    pub fn embedding(v: Vec<f64>) -> Self {
        ScoreResponse { ok: true, embedding: Some(v), ..Default::default() }
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        ScoreResponse { ok: false, error: Some(ErrorBody { code: code.into(), message: message.into() }), ..Default::default() }
    }

    /// Enforces the payload-family rule for `task` and surfaces server
    /// errors as [`ScorerError::Remote`].
    pub fn check(self, task: Task) -> Result<ScoreResponse, ScorerError> {
        if !self.ok {
            return match self.error {
                Some(e) => Err(ScorerError::Remote { code: e.code, message: e.message }),
                None => Err(ScorerError::Schema("ok=false without error".into())),
            };
        }
        if self.error.is_some() {
            return Err(ScorerError::Schema("ok=true with error".into()));
        }
        let has_value = self.value.is_some();
        let has_caption = self.text.is_some() || self.tags.is_some();
        let has_embedding = self.embedding.is_some();
        let valid = match task.family() {
            PayloadFamily::Value => has_value && !has_caption && !has_embedding && self.value.is_some_and(f64::is_finite),
            PayloadFamily::Caption => self.text.is_some() && self.tags.is_some() && !has_value && !has_embedding,
            PayloadFamily::Embedding => {
                has_embedding
                    && !has_value
                    && !has_caption
                    && self.embedding.as_ref().is_some_and(|e| !e.is_empty() && e.iter().all(|v| v.is_finite()))
            }
        };
        if valid {
            Ok(self)
        } else {
            Err(ScorerError::Schema(format!("payload does not match the {task} family {:?}", task.family())))
        }
    }

    pub fn to_canonical_json(&self) -> String {
        canonical(self)
    }
}

/// Sorted keys, no whitespace, shortest round-trip floats.
pub(crate) fn canonical<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .and_then(|v| serde_json::to_string(&v))
        .expect("protocol types always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_passes_through() {
        let r: ScoreResponse = serde_json::from_str(r#"{"ok":true,"value":5.1}"#).unwrap();
        assert_eq!(r.check(Task::Aesthetic).unwrap().value, Some(5.1));
    }

    #[test]
    fn missing_payload_is_schema_error() {
        let r: ScoreResponse = serde_json::from_str(r#"{"ok":true}"#).unwrap();
        assert!(matches!(r.check(Task::Aesthetic), Err(ScorerError::Schema(_))));
    }

    #[test]
    fn wrong_family_is_schema_error() {
        let r = ScoreResponse::value(1.0);
        assert!(matches!(r.check(Task::CaptionCoarse), Err(ScorerError::Schema(_))));
        let r = ScoreResponse::caption("a", vec![]);
        assert!(matches!(r.clone().check(Task::EmbedImage), Err(ScorerError::Schema(_))));
        assert!(r.check(Task::CaptionFine).is_ok());
    }

    #[test]
    fn server_error_code_surfaces() {
        let r: ScoreResponse = serde_json::from_str(r#"{"ok":false,"error":{"code":"decode_failed","message":"bad"}}"#).unwrap();
        let e = r.check(Task::Dover).unwrap_err();
        assert_eq!(e.code(), Some("decode_failed"));
    }

    #[test]
    fn request_shape_rules() {
        assert!(ScoreRequest::text(Task::EmbedText, "a").validate().is_ok());
        assert!(ScoreRequest::text(Task::Aesthetic, "a").validate().is_err());
        let fine = ScoreRequest::media(Task::CaptionFine, MediaKind::Video, "c.fpk");
        assert!(fine.validate().is_err());
        assert!(fine.with_text("ctx").validate().is_ok());
    }

    #[test]
    fn canonical_json_is_sorted_and_compact() {
        let req = ScoreRequest::media(Task::CaptionFine, MediaKind::Video, "c.fpk").with_text("t").with_param("b", "2").with_param("a", "1");
        assert_eq!(
            req.to_canonical_json(),
            r#"{"media":{"kind":"video","path":"c.fpk"},"params":{"a":"1","b":"2"},"task":"caption_fine","text":"t"}"#
        );
    }
}
