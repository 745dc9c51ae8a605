//! Chat-completion backends and the JSON-answer retry protocol.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ClassifyError;
use crate::transport::JsonTransport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("chat backend unavailable: {0}")]
pub struct ChatUnavailable(pub String);

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Raw assistant text for one system/user exchange.
    async fn complete(&self, request: &ChatRequest) -> Result<String, ChatUnavailable>;
}

/// OpenAI-compatible `chat/completions` client.
pub struct OpenAiChat {
    transport: Arc<dyn JsonTransport>,
    model: String,
}

impl OpenAiChat {
    pub fn new(transport: Arc<dyn JsonTransport>, model: impl Into<String>) -> Self {
        Self {
            transport,
            model: model.into(),
        }
    }
}

#[async_trait]
impl ChatBackend for OpenAiChat {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ChatUnavailable> {
        let body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
        });
        let resp = self
            .transport
            .post_json("chat/completions", &body)
            .await
            .map_err(|e| ChatUnavailable(e.to_string()))?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ChatUnavailable("response without choices[0].message.content".into()))
    }
}

/// One canned-answer rule. All substrings must occur for the rule to match;
/// successive matches walk through `responses` and then repeat the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    #[serde(default)]
    pub system_contains: Option<String>,
    #[serde(default)]
    pub user_contains: Vec<String>,
    pub responses: Vec<String>,
}

/// Chat backend answering from rules; used for offline fixtures and tests.
#[derive(Debug, Default)]
pub struct FixtureChat {
    rules: Vec<(ChatRule, AtomicUsize)>,
    calls: AtomicUsize,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureLoadError {
    #[error("reading {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("parsing {0}: {1}")]
    Parse(String, #[source] serde_json::Error),
}

impl FixtureChat {
    pub fn new(rules: Vec<ChatRule>) -> Self {
        Self {
            rules: rules.into_iter().map(|r| (r, AtomicUsize::new(0))).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureLoadError> {
        let name = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|e| FixtureLoadError::Io(name.clone(), e))?;
        let rules: Vec<ChatRule> = serde_json::from_str(&raw).map_err(|e| FixtureLoadError::Parse(name, e))?;
        Ok(Self::new(rules))
    }

    /// Convenience for a rule that matches on the user prompt only.
    pub fn rule(user_contains: &[&str], responses: &[&str]) -> ChatRule {
        ChatRule {
            system_contains: None,
            user_contains: user_contains.iter().map(|s| s.to_string()).collect(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for FixtureChat {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ChatUnavailable> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        for (rule, used) in &self.rules {
            let system_ok = rule
                .system_contains
                .as_deref()
                .is_none_or(|s| request.system_text.contains(s));
            let user_ok = rule.user_contains.iter().all(|s| request.user_text.contains(s.as_str()));
            if system_ok && user_ok && !rule.responses.is_empty() {
                let n = used.fetch_add(1, Ordering::SeqCst);
                return Ok(rule.responses[n.min(rule.responses.len() - 1)].clone());
            }
        }
        Err(ChatUnavailable(format!(
            "no fixture rule matches prompt starting {:?}",
            request.user_text.chars().take(80).collect::<String>()
        )))
    }
}

/// Returns the first JSON object embedded in `raw`, tolerating code fences
/// and surrounding prose.
pub fn extract_json_object(raw: &str) -> Option<Value> {
    let mut search = raw;
    while let Some(pos) = search.find('{') {
        let candidate = &search[pos..];
        let mut stream = serde_json::Deserializer::from_str(candidate).into_iter::<Value>();
        if let Some(Ok(value @ Value::Object(_))) = stream.next() {
            return Some(value);
        }
        search = &candidate[1..];
    }
    None
}

/// Sends the request, parsing the answer with `parse`. A malformed answer is
/// retried once with the identical prompt before it is surfaced.
pub async fn ask_json<T>(
    chat: &dyn ChatBackend,
    request: &ChatRequest,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, ClassifyError> {
    let mut last = String::new();
    for attempt in 0..2 {
        let raw = chat
            .complete(request)
            .await
            .map_err(|e| ClassifyError::ChatBackendUnavailable(e.0))?;
        match parse(&raw) {
            Ok(v) => return Ok(v),
            Err(e) => {
                tracing::debug!(attempt, error = %e, "malformed model output");
                last = e;
            }
        }
    }
    Err(ClassifyError::MalformedModelOutput(last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{Cassette, CassetteEntry, CassetteTransport};

    fn req(system: &str, user: &str) -> ChatRequest {
        ChatRequest {
            system_text: system.into(),
            user_text: user.into(),
            temperature: 0.0,
        }
    }

    #[test]
    fn extracts_fenced_and_embedded_objects() {
        let v = extract_json_object("```json\n{\"label\": \"Supported\", \"reason\": \"x\"}\n```").unwrap();
        assert_eq!(v["label"], "Supported");
        let v = extract_json_object("Sure! {not json} then {\"a\": {\"b\": 1}} trailing").unwrap();
        assert_eq!(v["a"]["b"], 1);
        assert!(extract_json_object("no braces").is_none());
        assert!(extract_json_object("[1, 2]").is_none());
    }

    #[tokio::test]
    async fn fixture_rules_match_and_advance() {
        let chat = FixtureChat::new(vec![
            ChatRule {
                system_contains: Some("web-search".into()),
                user_contains: vec!["Claim: A".into()],
                responses: vec!["rewrite".into()],
            },
            FixtureChat::rule(&["Claim: A"], &["first", "second"]),
        ]);
        assert_eq!(chat.complete(&req("writes web-search queries", "Claim: A")).await.unwrap(), "rewrite");
        assert_eq!(chat.complete(&req("kg", "Claim: A")).await.unwrap(), "first");
        assert_eq!(chat.complete(&req("kg", "Claim: A")).await.unwrap(), "second");
        assert_eq!(chat.complete(&req("kg", "Claim: A")).await.unwrap(), "second");
        assert!(chat.complete(&req("kg", "Claim: B")).await.is_err());
        assert_eq!(chat.calls(), 5);
    }

    #[tokio::test]
    async fn retries_once_then_fails() {
        let chat = FixtureChat::new(vec![FixtureChat::rule(&[""], &["nope", "still nope"])]);
        let r = ask_json(&chat, &req("s", "u"), |raw| {
            extract_json_object(raw).ok_or_else(|| "no json".to_string())
        })
        .await;
        assert_eq!(r, Err(ClassifyError::MalformedModelOutput("no json".into())));
        assert_eq!(chat.calls(), 2);

        let chat = FixtureChat::new(vec![FixtureChat::rule(&[""], &["bad", "{\"ok\": 1}"])]);
        let r = ask_json(&chat, &req("s", "u"), |raw| {
            extract_json_object(raw).ok_or_else(|| "no json".to_string())
        })
        .await
        .unwrap();
        assert_eq!(r["ok"], 1);
    }

    #[tokio::test]
    async fn openai_wire_format() {
        let body = json!({
            "model": "gpt-4o-mini",
            "temperature": 0.0,
            "messages": [
                {"role": "system", "content": "sys"},
                {"role": "user", "content": "usr"},
            ],
        });
        let cassette = Cassette::from_entries([CassetteEntry {
            path: "chat/completions".into(),
            request: body,
            response: json!({"choices": [{"message": {"role": "assistant", "content": "{}"}}]}),
        }]);
        let chat = OpenAiChat::new(Arc::new(CassetteTransport::new(cassette)), "gpt-4o-mini");
        assert_eq!(chat.complete(&req("sys", "usr")).await.unwrap(), "{}");
        assert!(chat.complete(&req("sys", "other")).await.is_err());
    }
}
