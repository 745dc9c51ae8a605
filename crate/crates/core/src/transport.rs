//! JSON-over-HTTP plumbing shared by the model, linker and SPARQL clients,
//! plus a cassette format for replaying recorded exchanges from disk.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("no recorded response for {path} {key}")]
    NotRecorded { path: String, key: String },
}

impl TransportError {
    fn is_retryable(&self) -> bool {
        match self {
            TransportError::Unreachable(_) | TransportError::Timeout(_) => true,
            TransportError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Something that accepts a JSON request at a path and answers with JSON.
#[async_trait]
pub trait JsonTransport: Send + Sync {
    async fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError>;
}

/// Serializes a JSON value with object keys sorted, independent of map ordering features.
pub fn canonical_json(value: &Value) -> String {
    fn sort(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let sorted: BTreeMap<&String, Value> = map.iter().map(|(k, v)| (k, sort(v))).collect();
                let mut out = serde_json::Map::new();
                for (k, v) in sorted {
                    out.insert(k.clone(), v);
                }
                Value::Object(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    fn write(value: &Value, out: &mut String) {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(v, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(&sort(value), &mut out);
    out
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    pub max_in_flight: usize,
    pub bearer_token: Option<String>,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(10),
            retries: 1,
            max_in_flight: 8,
            bearer_token: None,
        }
    }
}

/// Live HTTP transport with timeout, bounded retries and an in-flight cap.
pub struct HttpTransport {
    client: reqwest::Client,
    config: HttpConfig,
    in_flight: Semaphore,
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Self {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .expect("reqwest client with static configuration");
        let in_flight = Semaphore::new(config.max_in_flight.max(1));
        Self {
            client,
            config,
            in_flight,
        }
    }

    fn url(&self, path: &str) -> String {
        if path.is_empty() {
            return self.config.base_url.clone();
        }
        format!(
            "{}/{}",
            self.config.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }

    async fn once(&self, url: &str, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.config.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| self.map_err(e))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| self.map_err(e))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::InvalidJson(e.to_string()))
    }

    fn map_err(&self, e: reqwest::Error) -> TransportError {
        if e.is_timeout() {
            TransportError::Timeout(self.config.timeout)
        } else {
            TransportError::Unreachable(e.to_string())
        }
    }
}

#[async_trait]
impl JsonTransport for HttpTransport {
    async fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let url = self.url(path);
        let mut attempt = 0;
        loop {
            match self.once(&url, body).await {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    tracing::debug!(%url, error = %e, "retrying request");
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub path: String,
    pub request: Value,
    pub response: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum CassetteError {
    #[error("reading cassette {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing cassette {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Recorded request/response pairs, keyed by path and canonical request JSON.
#[derive(Debug, Clone, Default)]
pub struct Cassette {
    entries: BTreeMap<(String, String), CassetteEntry>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let mut c = Self::new();
        for e in entries {
            c.insert(e);
        }
        c
    }

    pub fn load(path: &Path) -> Result<Self, CassetteError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| CassetteError::Io {
            path: display.clone(),
            source,
        })?;
        let entries: Vec<CassetteEntry> =
            serde_json::from_str(&raw).map_err(|source| CassetteError::Parse { path: display, source })?;
        Ok(Self::from_entries(entries))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let entries: Vec<&CassetteEntry> = self.entries.values().collect();
        let mut text = serde_json::to_string_pretty(&entries).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn insert(&mut self, entry: CassetteEntry) {
        let key = (entry.path.clone(), canonical_json(&entry.request));
        self.entries.insert(key, entry);
    }

    pub fn lookup(&self, path: &str, request: &Value) -> Option<&Value> {
        self.entries
            .get(&(path.to_string(), canonical_json(request)))
            .map(|e| &e.response)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Replays a cassette. Unknown requests fail with [`TransportError::NotRecorded`].
#[derive(Debug, Clone)]
pub struct CassetteTransport {
    cassette: Arc<Cassette>,
}

impl CassetteTransport {
    pub fn new(cassette: Cassette) -> Self {
        Self {
            cassette: Arc::new(cassette),
        }
    }
}

#[async_trait]
impl JsonTransport for CassetteTransport {
    async fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        self.cassette
            .lookup(path, body)
            .cloned()
            .ok_or_else(|| TransportError::NotRecorded {
                path: path.to_string(),
                key: canonical_json(body),
            })
    }
}

/// Forwards to an inner transport and keeps every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    recorded: Mutex<Cassette>,
}

impl<T: JsonTransport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Cassette::new()),
        }
    }

    pub fn cassette(&self) -> Cassette {
        self.recorded.lock().expect("cassette lock").clone()
    }
}

#[async_trait]
impl<T: JsonTransport> JsonTransport for RecordingTransport<T> {
    async fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let response = self.inner.post_json(path, body).await?;
        self.recorded.lock().expect("cassette lock").insert(CassetteEntry {
            path: path.to_string(),
            request: body.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_keys_recursively() {
        let a = json!({"b": 1, "a": {"z": [1, {"y": 2, "x": 1}], "c": "s"}});
        assert_eq!(canonical_json(&a), r#"{"a":{"c":"s","z":[1,{"x":1,"y":2}]},"b":1}"#);
    }

    #[tokio::test]
    async fn cassette_replays_and_misses() {
        let t = CassetteTransport::new(Cassette::from_entries([CassetteEntry {
            path: "score".into(),
            request: json!({"claim": "c", "candidates": ["a"]}),
            response: json!({"scores": [0.1234567890123456789]}),
        }]));
        let got = t
            .post_json("score", &json!({"candidates": ["a"], "claim": "c"}))
            .await
            .unwrap();
        assert_eq!(got["scores"][0].as_f64().unwrap(), 0.1234567890123456789);
        let miss = t.post_json("score", &json!({"claim": "d"})).await;
        assert!(matches!(miss, Err(TransportError::NotRecorded { .. })));
    }

    #[tokio::test]
    async fn recording_then_saving_roundtrips() {
        let inner = CassetteTransport::new(Cassette::from_entries([CassetteEntry {
            path: "nli".into(),
            request: json!({"x": 1}),
            response: json!({"ok": true}),
        }]));
        let rec = RecordingTransport::new(inner);
        rec.post_json("nli", &json!({"x": 1})).await.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        rec.cassette().save(&file).unwrap();
        let loaded = Cassette::load(&file).unwrap();
        assert_eq!(loaded.lookup("nli", &json!({"x": 1})), Some(&json!({"ok": true})));
    }

    #[tokio::test]
    async fn http_transport_reports_unreachable() {
        let mut cfg = HttpConfig::new("http://127.0.0.1:9");
        cfg.timeout = Duration::from_millis(300);
        let t = HttpTransport::new(cfg);
        let err = t.post_json("score", &json!({})).await.unwrap_err();
        assert!(matches!(err, TransportError::Unreachable(_) | TransportError::Timeout(_)));
    }
}
