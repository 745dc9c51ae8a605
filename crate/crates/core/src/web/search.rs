//! Web search backends returning engine snippets.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Mutex;
use tokio::time::Instant;

pub const PAGE_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("search backend unavailable: {0}")]
    SearchBackendUnavailable(String),
    #[error("search quota exceeded: {0}")]
    QuotaExceeded(String),
}

/// One search hit. `rank` is the 1-based position in the engine's results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub text: String,
    #[serde(default)]
    pub title: String,
    pub url: String,
    pub rank: usize,
}

impl Snippet {
    pub fn is_valid(&self) -> bool {
        !self.url.trim().is_empty() && !self.text.trim().is_empty()
    }
}

#[async_trait]
pub trait SearchEngine: Send + Sync {
    /// Up to `max_results` hits for `query`, in engine rank order.
    async fn search(&self, query: &str, max_results: usize) -> Result<Vec<Snippet>, SearchError>;
}

/// Google Programmable Search (Custom Search JSON API).
pub struct ProgrammableSearch {
    client: reqwest::Client,
    endpoint: String,
    api_key: String,
    engine_id: String,
}

impl ProgrammableSearch {
    pub const DEFAULT_ENDPOINT: &'static str = "https://www.googleapis.com/customsearch/v1";

    pub fn new(api_key: impl Into<String>, engine_id: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("reqwest client with static configuration"),
            endpoint: Self::DEFAULT_ENDPOINT.to_string(),
            api_key: api_key.into(),
            engine_id: engine_id.into(),
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }

    async fn page(&self, query: &str, start: usize) -> Result<Vec<(String, String, String)>, SearchError> {
        let resp = self
            .client
            .get(&self.endpoint)
            .query(&[
                ("key", self.api_key.as_str()),
                ("cx", self.engine_id.as_str()),
                ("q", query),
                ("num", &PAGE_SIZE.to_string()),
                ("start", &start.to_string()),
            ])
            .send()
            .await
            .map_err(|e| SearchError::SearchBackendUnavailable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .await
            .map_err(|e| SearchError::SearchBackendUnavailable(e.to_string()))?;
        if status.as_u16() == 429 || (status.as_u16() == 403 && body.to_ascii_lowercase().contains("quota")) {
            return Err(SearchError::QuotaExceeded(body));
        }
        if !status.is_success() {
            return Err(SearchError::SearchBackendUnavailable(format!("HTTP {status}: {body}")));
        }
        let doc: Value =
            serde_json::from_str(&body).map_err(|e| SearchError::SearchBackendUnavailable(e.to_string()))?;
        Ok(parse_cse_items(&doc))
    }
}

/// `(title, link, snippet)` for each item of a Custom Search response.
pub fn parse_cse_items(doc: &Value) -> Vec<(String, String, String)> {
    let field = |item: &Value, name: &str| item.get(name).and_then(Value::as_str).unwrap_or_default().to_string();
    doc.get("items")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .map(|i| (field(i, "title"), field(i, "link"), field(i, "snippet")))
                .collect()
        })
        .unwrap_or_default()
}

#[async_trait]
impl SearchEngine for ProgrammableSearch {
    async fn search(&self, query: &str, max_results: usize) -> Result<Vec<Snippet>, SearchError> {
        let mut out = Vec::new();
        let mut start = 1;
        while out.len() < max_results {
            let page = self.page(query, start).await?;
            let exhausted = page.len() < PAGE_SIZE;
            for (title, url, text) in page {
                out.push(Snippet {
                    text: text.split_whitespace().collect::<Vec<_>>().join(" "),
                    title,
                    url,
                    rank: out.len() + 1,
                });
            }
            // the API refuses start > 91
            start += PAGE_SIZE;
            if exhausted || start > 91 {
                break;
            }
        }
        out.truncate(max_results);
        Ok(out)
    }
}

/// Replays recorded results: a JSON object mapping query text to snippets.
#[derive(Debug, Clone, Default)]
pub struct FixtureSearch {
    results: BTreeMap<String, Vec<Snippet>>,
}

impl FixtureSearch {
    pub fn new(results: BTreeMap<String, Vec<Snippet>>) -> Self {
        Self { results }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let results = serde_json::from_str(&raw).map_err(std::io::Error::other)?;
        Ok(Self { results })
    }
}

#[async_trait]
impl SearchEngine for FixtureSearch {
    async fn search(&self, query: &str, max_results: usize) -> Result<Vec<Snippet>, SearchError> {
        let hits = self.results.get(query).ok_or_else(|| {
            SearchError::SearchBackendUnavailable(format!("no recorded results for {query:?}"))
        })?;
        let mut hits = hits.clone();
        hits.sort_by_key(|s| s.rank);
        hits.truncate(max_results);
        Ok(hits)
    }
}

/// Spaces out requests to at most `per_second` per second.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let interval = if per_second.is_finite() && per_second > 0.0 {
            Duration::from_secs_f64(1.0 / per_second)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            next: Mutex::new(None),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(0.0)
    }

    pub async fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait_until = {
            let mut next = self.next.lock().await;
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        tokio::time::sleep_until(wait_until).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_custom_search_items() {
        let doc = json!({"items": [
            {"title": "T", "link": "https://a", "snippet": "S"},
            {"title": "U", "link": "https://b"}
        ]});
        let items = parse_cse_items(&doc);
        assert_eq!(items[0], ("T".into(), "https://a".into(), "S".into()));
        assert_eq!(items[1].2, "");
        assert!(parse_cse_items(&json!({})).is_empty());
    }

    #[tokio::test]
    async fn fixture_search_orders_by_rank_and_truncates() {
        let mut map = BTreeMap::new();
        map.insert(
            "q".to_string(),
            vec![
                Snippet { text: "b".into(), title: String::new(), url: "https://b".into(), rank: 2 },
                Snippet { text: "a".into(), title: String::new(), url: "https://a".into(), rank: 1 },
            ],
        );
        let s = FixtureSearch::new(map);
        let hits = s.search("q", 1).await.unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].url, "https://a");
        assert!(matches!(s.search("other", 5).await, Err(SearchError::SearchBackendUnavailable(_))));
    }

    #[tokio::test(start_paused = true)]
    async fn rate_limiter_spaces_requests() {
        let rl = RateLimiter::new(10.0);
        let start = Instant::now();
        for _ in 0..5 {
            rl.acquire().await;
        }
        let elapsed = start.elapsed();
        assert!(elapsed >= Duration::from_millis(400), "{elapsed:?}");
        assert!(elapsed < Duration::from_millis(500), "{elapsed:?}");
    }
}
