use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreRequest, ScoreResponse, Scorer, ScorerError, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    /// Base URL used for every task without an entry in `endpoints`.
    pub endpoint: String,
    pub endpoints: BTreeMap<Task, String>,
    /// Additional attempts after the first transport failure.
    pub retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_ms: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            endpoint: "http://127.0.0.1:8080".to_string(),
            endpoints: BTreeMap::new(),
            retries: 3,
            backoff_base_ms: 100,
            timeout_ms: 30_000,
        }
    }
}

impl ScorerConfig {
    pub fn with_endpoint(endpoint: impl Into<String>) -> Self {
        ScorerConfig { endpoint: endpoint.into(), ..Default::default() }
    }

    pub fn endpoint_for(&self, task: Task) -> &str {
        self.endpoints.get(&task).unwrap_or(&self.endpoint)
    }

    pub fn url_for(&self, task: Task) -> String {
        format!("{}/v1/score", self.endpoint_for(task).trim_end_matches('/'))
    }
}

/// Blocking HTTP client. The underlying agent pools connections and is
/// shared by all worker threads.
pub struct HttpScorer {
    config: ScorerConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpScorer").field("config", &self.config).finish()
    }
}

enum Attempt {
    Retry(String),
    Fatal(ScorerError),
}

impl HttpScorer {
    pub fn new(config: ScorerConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpScorer { config, agent }
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    fn attempt(&self, url: &str, body: &str, task: Task) -> Result<ScoreResponse, Attempt> {
        let mut resp = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let mut text = String::new();
        resp.body_mut()
            .as_reader()
            .read_to_string(&mut text)
            .map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
        if status != 200 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        let parsed: ScoreResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(ScorerError::Schema(format!("unparseable response: {e}"))))?;
        parsed.check(task).map_err(Attempt::Fatal)
    }
}

impl Scorer for HttpScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        request.validate()?;
        let url = self.config.url_for(request.task);
        let body = request.to_canonical_json();
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(20));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&url, &body, request.task) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("scorer {url} attempt {}/{attempts} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(ScorerError::Transport { attempts, message: last })
    }
}
