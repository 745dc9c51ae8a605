//! Web fallback: query rewriting, snippet retrieval, ranking and classification.

pub mod search;

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::chat::{ask_json, extract_json_object, ChatBackend, ChatRequest};
use crate::classify::{ClassifyError, PromptStage, PromptTemplate, VerdictClassifier};
use crate::domain::{Claim, EvidenceItem, Verdict};
use crate::ranking::{EvidenceRanker, RankingError};
pub use search::{FixtureSearch, ProgrammableSearch, RateLimiter, SearchEngine, SearchError, Snippet};

pub const MAX_QUERY_WORDS: usize = 12;
pub const MIN_QUERIES: usize = 3;
pub const MAX_QUERIES: usize = 5;
pub const DEFAULT_N_MAX: usize = 100;

/// A search query of at most twelve words, with no operators except quotes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchQuery(String);

impl SearchQuery {
    /// Strips hashtags and `name:value` operators, drops `+`/`-` prefixes,
    /// then truncates to the first twelve words. `None` if nothing is left.
    pub fn new(raw: &str) -> Option<Self> {
        let words: Vec<String> = raw
            .split_whitespace()
            .filter(|w| !w.starts_with('#') && !is_operator(w))
            .map(|w| w.trim_start_matches(['+', '-']).to_string())
            .filter(|w| !w.is_empty())
            .take(MAX_QUERY_WORDS)
            .collect();
        if words.is_empty() {
            return None;
        }
        Some(SearchQuery(words.join(" ")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn word_count(&self) -> usize {
        self.0.split_whitespace().count()
    }
}

fn is_operator(word: &str) -> bool {
    let w = word.trim_start_matches(['+', '-', '"']);
    match w.split_once(':') {
        Some((name, value)) => !name.is_empty() && name.chars().all(|c| c.is_ascii_alphabetic()) && !value.is_empty(),
        None => false,
    }
}

/// Parses `{"queries": [...]}`: sanitizes, dedups, keeps at most five.
pub fn parse_queries(raw: &str) -> Result<Vec<SearchQuery>, String> {
    let obj = extract_json_object(raw).ok_or_else(|| "no JSON object in model output".to_string())?;
    let list = obj
        .get("queries")
        .and_then(Value::as_array)
        .ok_or_else(|| "missing array field \"queries\"".to_string())?;
    let mut seen = HashSet::new();
    let queries: Vec<SearchQuery> = list
        .iter()
        .filter_map(Value::as_str)
        .filter_map(SearchQuery::new)
        .filter(|q| seen.insert(q.as_str().to_lowercase()))
        .take(MAX_QUERIES)
        .collect();
    if queries.is_empty() {
        return Err("no usable queries".into());
    }
    Ok(queries)
}

/// Asks the chat model for 3-5 high-recall search queries.
pub async fn rewrite_queries(chat: &dyn ChatBackend, claim: &Claim) -> Result<Vec<SearchQuery>, ClassifyError> {
    if claim.text.trim().is_empty() {
        return Err(ClassifyError::EmptyClaim);
    }
    let rendered = PromptTemplate::for_stage(PromptStage::Rewrite).render(&claim.text, &[]);
    let request = ChatRequest {
        system_text: rendered.system,
        user_text: rendered.user,
        temperature: 0.0,
    };
    let queries = ask_json(chat, &request, parse_queries).await?;
    if queries.len() < MIN_QUERIES {
        tracing::warn!(claim = %claim.id, n = queries.len(), "fewer rewritten queries than requested");
    }
    Ok(queries)
}

/// Interleaves per-query result lists by rank, dropping repeated URLs.
pub fn round_robin_merge(per_query: &[Vec<Snippet>], n_max: usize) -> Vec<Snippet> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let depth = per_query.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for rank in 0..depth {
        for list in per_query {
            if out.len() >= n_max {
                break 'outer;
            }
            if let Some(s) = list.get(rank) {
                if s.is_valid() && seen.insert(s.url.clone()) {
                    out.push(s.clone());
                }
            }
        }
    }
    out
}

/// Runs every query (rate limited, concurrently), then merges round-robin.
/// Fails only when every query fails.
pub async fn search_snippets(
    engine: &dyn SearchEngine,
    queries: &[SearchQuery],
    n_max: usize,
    limiter: &RateLimiter,
) -> Result<Vec<Snippet>, SearchError> {
    if queries.is_empty() || n_max == 0 {
        return Ok(Vec::new());
    }
    let calls = queries.iter().map(|q| async move {
        limiter.acquire().await;
        engine.search(q.as_str(), n_max).await
    });
    let results = futures::future::join_all(calls).await;
    let mut lists = Vec::with_capacity(results.len());
    let mut first_err = None;
    for (q, r) in queries.iter().zip(results) {
        match r {
            Ok(mut list) => {
                list.sort_by_key(|s| s.rank);
                lists.push(list);
            }
            Err(e) => {
                tracing::warn!(query = q.as_str(), error = %e, "search query failed");
                first_err.get_or_insert(e);
                lists.push(Vec::new());
            }
        }
    }
    if let Some(e) = first_err {
        if lists.iter().all(Vec::is_empty) {
            return Err(e);
        }
    }
    Ok(round_robin_merge(&lists, n_max))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WebError {
    #[error("web stage, query rewriting: {0}")]
    Rewrite(ClassifyError),
    #[error("web stage, search: {0}")]
    Search(SearchError),
    #[error("web stage, ranking: {0}")]
    Ranking(RankingError),
    #[error("web stage, classification: {0}")]
    Classify(ClassifyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WebOutcome {
    pub verdict: Verdict,
    /// The selected top-k snippets the verdict was made from.
    pub evidence: Vec<EvidenceItem>,
    pub queries: Vec<SearchQuery>,
    pub retrieved: Vec<Snippet>,
}

pub struct WebFallback {
    pub chat: Arc<dyn ChatBackend>,
    pub engine: Arc<dyn SearchEngine>,
    pub ranker: Arc<EvidenceRanker>,
    pub classifier: Arc<VerdictClassifier>,
    pub limiter: Arc<RateLimiter>,
    pub n_max: usize,
}

impl WebFallback {
    /// Rewrite, search, rank, classify. The verdict is final; this never
    /// triggers another retrieval round.
    pub async fn run(&self, claim: &Claim) -> Result<WebOutcome, WebError> {
        let queries = rewrite_queries(self.chat.as_ref(), claim)
            .await
            .map_err(WebError::Rewrite)?;
        let retrieved = search_snippets(self.engine.as_ref(), &queries, self.n_max, &self.limiter)
            .await
            .map_err(WebError::Search)?;
        if retrieved.is_empty() {
            return Ok(WebOutcome {
                verdict: Verdict::nei("No web snippets were retrieved."),
                evidence: Vec::new(),
                queries,
                retrieved,
            });
        }
        let candidates: Vec<EvidenceItem> = retrieved
            .iter()
            .map(|s| EvidenceItem::from_snippet(s.text.clone(), s.url.clone(), s.title.clone()))
            .collect();
        let evidence = self
            .ranker
            .rank(&claim.text, candidates)
            .await
            .map_err(WebError::Ranking)?;
        let verdict = self
            .classifier
            .classify(claim, &evidence, PromptStage::Web)
            .await
            .map_err(WebError::Classify)?;
        Ok(WebOutcome {
            verdict,
            evidence,
            queries,
            retrieved,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::FixtureChat;

    fn snip(q: &str, i: usize) -> Snippet {
        Snippet {
            text: format!("{q} result {i}"),
            title: String::new(),
            url: format!("https://{q}.example/{i}"),
            rank: i + 1,
        }
    }

    #[test]
    fn query_sanitizing() {
        let q = SearchQuery::new("one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen")
            .unwrap();
        assert_eq!(q.word_count(), 12);
        assert!(q.as_str().ends_with("twelve"));
        assert_eq!(
            SearchQuery::new("\"Eric Trump\" father site:nytimes.com #politics -banned").unwrap().as_str(),
            "\"Eric Trump\" father banned"
        );
        assert_eq!(SearchQuery::new("at 10:30 today").unwrap().as_str(), "at 10:30 today");
        assert!(SearchQuery::new("  #only ").is_none());
    }

    #[test]
    fn parse_queries_caps_and_dedups() {
        let four = r#"{"queries": ["a", "b", "c", "d"]}"#;
        assert_eq!(parse_queries(four).unwrap().len(), 4);
        let six = r#"{"queries": ["a", "b", "c", "d", "e", "f"]}"#;
        let got: Vec<String> = parse_queries(six).unwrap().into_iter().map(|q| q.0).collect();
        assert_eq!(got, vec!["a", "b", "c", "d", "e"]);
        let dup = r#"{"queries": ["a b", "A b", "c"]}"#;
        assert_eq!(parse_queries(dup).unwrap().len(), 2);
        assert!(parse_queries(r#"{"queries": []}"#).is_err());
        assert!(parse_queries("queries: a, b").is_err());
    }

    #[test]
    fn merge_interleaves_by_rank() {
        let q1: Vec<Snippet> = (0..3).map(|i| snip("q1", i)).collect();
        let q2: Vec<Snippet> = (0..3).map(|i| snip("q2", i)).collect();
        let merged = round_robin_merge(&[q1.clone(), q2.clone()], 100);
        let want = vec![
            q1[0].clone(),
            q2[0].clone(),
            q1[1].clone(),
            q2[1].clone(),
            q1[2].clone(),
            q2[2].clone(),
        ];
        assert_eq!(merged, want);
        assert_eq!(round_robin_merge(&[q1.clone(), q2.clone()], 2), want[..2].to_vec());

        let mut dup = q2.clone();
        dup[1].url = q1[0].url.clone();
        let merged = round_robin_merge(&[q1, dup], 100);
        assert_eq!(merged.len(), 5);
        assert_eq!(merged.iter().filter(|s| s.url == "https://q1.example/0").count(), 1);
    }

    #[tokio::test]
    async fn rewrite_truncates_long_queries() {
        let long = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12 w13 w14 w15";
        let chat = FixtureChat::new(vec![FixtureChat::rule(
            &["Claim: X"],
            &[&format!(r#"{{"queries": ["{long}", "b", "c"]}}"#)],
        )]);
        let claim = Claim::new("x", "X").unwrap();
        let qs = rewrite_queries(&chat, &claim).await.unwrap();
        assert_eq!(qs[0].as_str(), "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12");
    }

    #[tokio::test]
    async fn search_fails_only_if_all_queries_fail() {
        let mut map = std::collections::BTreeMap::new();
        map.insert("ok".to_string(), vec![snip("ok", 0)]);
        let engine = FixtureSearch::new(map);
        let limiter = RateLimiter::unlimited();
        let qs = [SearchQuery::new("ok").unwrap(), SearchQuery::new("missing").unwrap()];
        assert_eq!(search_snippets(&engine, &qs, 10, &limiter).await.unwrap().len(), 1);
        let bad = [SearchQuery::new("missing").unwrap()];
        assert!(search_snippets(&engine, &bad, 10, &limiter).await.is_err());
    }
}
