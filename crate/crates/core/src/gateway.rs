//! Chat-completion access for the agents.
//!
//! A [`Gateway`] wraps one [`Backend`] (live HTTP or fixture replay) with an
//! optional on-disk response cache and a bound on in-flight requests. It
//! never interprets responses; the parsers at the bottom of this module turn
//! raw text into flow tuples or labels.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Backend label used when computing fixture digests, so responses recorded
/// from a live run can be replayed by the mock backend.
pub const RECORDING_BACKEND: &str = "live";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("mock backend has no fixture for request {0}")]
    MockMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot parse model output: {0}")]
    ParseFailure(String),
    #[error("label `{label}` is not one of {allowed:?}")]
    LabelOutOfVocabulary { label: String, allowed: Vec<String> },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GatewayError + '_ {
    move |source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_content: String,
    pub user_content: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
}

impl ChatRequest {
    pub fn new(
        system_content: impl Into<String>,
        user_content: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            system_content: system_content.into(),
            user_content: user_content.into(),
            model: model.into(),
            temperature: 0.5,
            top_p: 0.5,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system_content.trim().is_empty() || self.user_content.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        for (name, v) in [("temperature", self.temperature), ("top_p", self.top_p)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GatewayError::InvalidRequest(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub cached: bool,
    pub backend: String,
}

/// SHA-256 over the backend label, sampling settings and both messages.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub digest: String,
}

impl CacheKey {
    pub fn new(backend: &str, req: &ChatRequest) -> Self {
        let mut hasher = Sha256::new();
        let temperature = format!("{:?}", req.temperature);
        let top_p = format!("{:?}", req.top_p);
        for field in [
            backend,
            req.model.as_str(),
            temperature.as_str(),
            top_p.as_str(),
            req.system_content.as_str(),
            req.user_content.as_str(),
        ] {
            // Length prefixes keep field boundaries unambiguous.
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        Self {
            digest: hex::encode(hasher.finalize()),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.txt", self.digest)
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

/// One file per request digest containing the raw response text.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<String>, GatewayError> {
        let path = self.dir.join(key.file_name());
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn put(&self, key: &CacheKey, text: &str) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.dir.join(key.file_name());
        let tmp = self.dir.join(format!(".{}.tmp", key.digest));
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|p| p.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|p| p.into_inner());
        }
        *active += 1;
        InFlightGuard { owner: self }
    }
}

struct InFlightGuard<'a> {
    owner: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.owner.active.lock().unwrap_or_else(|p| p.into_inner());
        *active -= 1;
        self.owner.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    in_flight: InFlight,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self {
            backend,
            cache: None,
            in_flight: InFlight::new(4),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight = InFlight::new(limit);
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let key = CacheKey::new(self.backend.name(), req);
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&key)? {
                return Ok(ChatResponse {
                    text,
                    cached: true,
                    backend: self.backend.name().to_string(),
                });
            }
        }
        let text = {
            let _slot = self.in_flight.acquire();
            self.backend.send(req)?
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        Ok(ChatResponse {
            text,
            cached: false,
            backend: self.backend.name().to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with up to 50% random jitter.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay);
        let jitter = rand::thread_rng().gen_range(0.0..0.5);
        exp.mul_f64(1.0 + jitter)
    }
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct LiveBackend {
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(base_url: &str, api_key: String) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Backend(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            retry: RetryPolicy::default(),
            client,
        })
    }

    /// Reads the API key from the named environment variable.
    pub fn from_env(base_url: &str, api_key_env: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(api_key_env).map_err(|_| {
            GatewayError::Backend(format!("environment variable {api_key_env} is not set"))
        })?;
        Self::new(base_url, key)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, req: &ChatRequest) -> Result<String, (bool, String)> {
        let body = serde_json::json!({
            "model": req.model,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "messages": [
                {"role": "system", "content": req.system_content},
                {"role": "user", "content": req.user_content},
            ],
        });
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err((retryable, format!("HTTP {status}")));
        }
        let value: Value = resp.json().map_err(|e| (false, e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "response lacks choices[0].message.content".to_string()))
    }
}

impl Backend for LiveBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            match self.attempt(req) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) => {
                    log::warn!("chat completion attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                    if !retryable {
                        break;
                    }
                    if attempt + 1 < self.retry.max_attempts {
                        std::thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(GatewayError::Backend(last))
    }
}

/// One authoring rule in a mock manifest; the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_contains: Vec<String>,
    pub response: String,
}

impl MockRule {
    fn matches(&self, req: &ChatRequest) -> bool {
        self.system_contains
            .as_deref()
            .is_none_or(|s| req.system_content.contains(s))
            && self.user_contains.iter().all(|s| req.user_content.contains(s))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockManifest {
    pub rules: Vec<MockRule>,
}

/// Replays fixtures: exact digest files first, then manifest rules.
///
/// Digest files are named by [`CacheKey`] computed with the
/// [`RECORDING_BACKEND`] label, so a live cache directory doubles as a
/// fixture directory.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixture_dir: Option<PathBuf>,
    manifest: MockManifest,
}

impl MockBackend {
    pub fn new(manifest: MockManifest) -> Self {
        Self {
            fixture_dir: None,
            manifest,
        }
    }

    /// Loads `<dir>/manifest.json` if present and serves `<dir>/<digest>.txt`.
    pub fn from_dir(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(GatewayError::Io {
                path: dir.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "fixture directory not found"),
            });
        }
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            serde_json::from_str(&text).map_err(|e| {
                GatewayError::ParseFailure(format!("{}: {e}", manifest_path.display()))
            })?
        } else {
            MockManifest::default()
        };
        Ok(Self {
            fixture_dir: Some(dir),
            manifest,
        })
    }

    pub fn push_rule(&mut self, rule: MockRule) {
        self.manifest.rules.push(rule);
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let key = CacheKey::new(RECORDING_BACKEND, req);
        if let Some(dir) = &self.fixture_dir {
            let path = dir.join(key.file_name());
            if path.exists() {
                return fs::read_to_string(&path).map_err(io_err(&path));
            }
        }
        self.manifest
            .rules
            .iter()
            .find(|r| r.matches(req))
            .map(|r| r.response.clone())
            .ok_or(GatewayError::MockMiss(key.digest))
    }
}

/// Sender, types and receivers as returned by the flow prompt; empty
/// sender or receiver lists stand for an unknown party.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFlowTuple {
    pub senders: Vec<String>,
    pub data_types: Vec<String>,
    pub receivers: Vec<String>,
}

/// Removes a surrounding Markdown code fence and whitespace.
pub fn strip_code_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_suffix("```").unwrap_or(rest);
    // Drop an info string such as `json` on the opening fence line.
    match rest.find('\n') {
        Some(nl) if !rest[..nl].trim().contains(['{', '[']) => rest[nl + 1..].trim(),
        _ => rest.trim(),
    }
}

fn is_none_answer(text: &str) -> bool {
    let t = text.trim().trim_matches(|c| c == '"' || c == '\'' || c == '.');
    t.eq_ignore_ascii_case("none")
}

fn string_list(value: &Value, field: &str) -> Result<Vec<String>, GatewayError> {
    let items: Vec<&str> = match value {
        Value::Null => vec![],
        Value::String(s) => vec![s.as_str()],
        Value::Array(items) => items
            .iter()
            .map(|v| {
                v.as_str().ok_or_else(|| {
                    GatewayError::ParseFailure(format!("`{field}` contains a non-string item"))
                })
            })
            .collect::<Result<_, _>>()?,
        _ => {
            return Err(GatewayError::ParseFailure(format!(
                "`{field}` must be a string or list of strings"
            )))
        }
    };
    let mut seen = BTreeSet::new();
    Ok(items
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty() && seen.insert(s.to_string()))
        .map(str::to_string)
        .collect())
}

fn output_items(text: &str) -> Result<Vec<Value>, GatewayError> {
    let value: Value = serde_json::from_str(strip_code_fences(text))
        .map_err(|e| GatewayError::ParseFailure(e.to_string()))?;
    match value.get("Output") {
        Some(Value::Array(items)) => Ok(items.clone()),
        Some(obj @ Value::Object(_)) => Ok(vec![obj.clone()]),
        _ => Err(GatewayError::ParseFailure(
            "expected an object with an `Output` list".into(),
        )),
    }
}

/// Parses a flow-extraction answer into raw tuples.
///
/// Lists are trimmed and de-duplicated; blank strings are dropped, so an
/// empty sender or receiver becomes an empty list.
pub fn parse_flow_output(text: &str) -> Result<Vec<RawFlowTuple>, GatewayError> {
    if is_none_answer(strip_code_fences(text)) {
        return Ok(Vec::new());
    }
    output_items(text)?
        .iter()
        .map(|item| {
            if !item.is_object() {
                return Err(GatewayError::ParseFailure("flow item is not an object".into()));
            }
            Ok(RawFlowTuple {
                senders: string_list(&item["data_sender"], "data_sender")?,
                data_types: string_list(&item["data_type"], "data_type")?,
                receivers: string_list(&item["data_receiver"], "data_receiver")?,
            })
        })
        .collect()
}

/// Renders tuples in the flow prompt's answer format.
pub fn render_flow_output(tuples: &[RawFlowTuple]) -> String {
    if tuples.is_empty() {
        return "None".to_string();
    }
    let items: Vec<Value> = tuples
        .iter()
        .map(|t| {
            let sender = match t.senders.as_slice() {
                [] => Value::String(String::new()),
                [one] => Value::String(one.clone()),
                many => Value::from(many.to_vec()),
            };
            serde_json::json!({
                "data_sender": sender,
                "data_type": t.data_types,
                "data_receiver": t.receivers,
            })
        })
        .collect();
    serde_json::json!({ "Output": items }).to_string()
}

/// Keys under which label agents may report their answer.
pub const LABEL_FIELDS: &[&str] = &[
    "DataCategory",
    "DataConsumerType",
    "ConsumerType",
    "DataProcessingPurpose",
    "Purpose",
    "DataProcessingMethod",
    "Method",
    "Label",
];

/// Extracts a closed-vocabulary label from a classification answer.
pub fn parse_label_output(text: &str, allowed: &[String]) -> Result<String, GatewayError> {
    let lookup = |label: &str| -> Result<String, GatewayError> {
        let label = label.trim();
        allowed
            .iter()
            .find(|a| a.eq_ignore_ascii_case(label))
            .cloned()
            .ok_or_else(|| GatewayError::LabelOutOfVocabulary {
                label: label.to_string(),
                allowed: allowed.to_vec(),
            })
    };
    if allowed.is_empty() {
        return Err(GatewayError::InvalidRequest("empty label vocabulary".into()));
    }
    if is_none_answer(strip_code_fences(text)) {
        return lookup("Unspecified");
    }
    let items = output_items(text)?;
    let first = items
        .first()
        .ok_or_else(|| GatewayError::ParseFailure("empty `Output` list".into()))?;
    let label = LABEL_FIELDS
        .iter()
        .find_map(|f| first.get(*f).and_then(Value::as_str))
        .ok_or_else(|| GatewayError::ParseFailure("no label field in output".into()))?;
    if is_none_answer(label) {
        return lookup("Unspecified");
    }
    lookup(label)
}
