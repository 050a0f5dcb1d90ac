//! Run configuration: one JSON document, deep-merged over the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::ErrorClass;
use crate::filterpipe::{PipelineConfig, Stage, StageSet};
use crate::geometry::GeometryConfig;
use crate::ingest::DEFAULT_DECODE_TEMPLATE;
use crate::scenedetect::SegmenterConfig;
use crate::scorers::ScorerConfig;

/// Environment variable naming a config file when no path is given.
pub const CONFIG_ENV: &str = "VIDCURATE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ConfigError::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stages: StageSet,
    pub scorer: ScorerConfig,
    pub segmenter: SegmenterConfig,
    pub geometry: GeometryConfig,
    pub workers: usize,
    pub skip_on_scorer_error: bool,
    /// Command line for the external decoder; see [`crate::ingest::decode_external`].
    pub decode_template: String,
    pub require_mid_frame_captions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stages: StageSet::default(),
            scorer: ScorerConfig::default(),
            segmenter: SegmenterConfig::default(),
            geometry: GeometryConfig::default(),
            workers: 1,
            skip_on_scorer_error: false,
            decode_template: DEFAULT_DECODE_TEMPLATE.to_string(),
            require_mid_frame_captions: true,
        }
    }
}

/// Objects merge key by key; anything else in `overlay` replaces `base`.
pub fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Merges a JSON document over the defaults and validates the result.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let overlay: Value = serde_json::from_str(text).map_err(|e| ConfigError::Malformed { path: origin.to_path_buf(), message: e.to_string() })?;
        if !overlay.is_object() {
            return Err(ConfigError::Invalid("top level must be a JSON object".into()));
        }
        let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        deep_merge(&mut merged, overlay);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        if self.workers < 1 {
            return Err(invalid("workers must be >= 1".into()));
        }
        self.stages.validate().map_err(invalid)?;
        self.segmenter.validate().map_err(invalid)?;
        self.geometry.validate().map_err(|e| invalid(e.to_string()))?;
        if !self.scorer.endpoint.starts_with("http://") && !self.scorer.endpoint.starts_with("https://") {
            return Err(invalid(format!("scorer.endpoint {:?} must be an http(s) URL", self.scorer.endpoint)));
        }
        if self.scorer.timeout_ms == 0 {
            return Err(invalid("scorer.timeout_ms must be > 0".into()));
        }
        Ok(())
    }

    /// Loads `path`, or the file named by `VIDCURATE_CONFIG`, or the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let Some(path) = path.map(Path::to_path_buf).or(from_env) else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        RunConfig::from_json_str(&text, &path)
    }

    pub fn pipeline(&self, stage: Stage, work_dir: impl Into<PathBuf>) -> PipelineConfig {
        PipelineConfig {
            stage,
            thresholds: self.stages.get(stage).clone(),
            segmenter: self.segmenter.clone(),
            decode_template: self.decode_template.clone(),
            skip_on_scorer_error: self.skip_on_scorer_error,
            require_mid_frame_captions: self.require_mid_frame_captions,
            work_dir: work_dir.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_json_str(text, Path::new("test.json"))
    }

    #[test]
    fn empty_is_default() {
        assert_eq!(load("{}").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_override_keeps_the_rest() {
        let cfg = load(r#"{"stages":{"t2v_finetune":{"aesthetic_min":5.5}}}"#).unwrap();
        let mut expect = RunConfig::default();
        expect.stages.t2v_finetune.aesthetic_min = 5.5;
        assert_eq!(cfg, expect);
    }

    #[test]
    fn fixed_point() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(load(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(load(r#"{"workers":-1}"#), Err(ConfigError::Invalid(_))));
        assert!(matches!(load(r#"{"workers":0}"#), Err(ConfigError::Invalid(_))));
        assert!(matches!(load(r#"{"stages":{"t2v_finetune":{"brightness":[180,20]}}}"#), Err(ConfigError::Invalid(_))));
        assert!(matches!(load(r#"{"bogus":1}"#), Err(ConfigError::Invalid(_))));
        assert!(matches!(load("{"), Err(ConfigError::Malformed { .. })));
        assert!(matches!(load(r#"{"geometry":{"tile_pixels":100}}"#), Err(ConfigError::Invalid(_))));
    }
}
