//! Evidence verbalization, relevance scoring and top-k selection.
//!
//! The same ranker serves KG triples and web snippets.

use std::collections::HashSet;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::{EvidenceItem, Term, Triple};
use crate::transport::JsonTransport;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankingError {
    #[error("no candidates to score")]
    NoCandidates,
    #[error("relevance scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerBackend {
    RemoteCrossEncoder,
    #[default]
    LexicalFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub k: usize,
    pub scorer_backend: ScorerBackend,
}

impl RankingConfig {
    pub fn new(k: usize, scorer_backend: ScorerBackend) -> Result<Self, RankingError> {
        if k == 0 {
            return Err(RankingError::InvalidK);
        }
        Ok(Self { k, scorer_backend })
    }
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            scorer_backend: ScorerBackend::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub item: EvidenceItem,
    pub score: f64,
}

/// Last path or fragment segment of an IRI.
pub fn local_name(iri: &str) -> &str {
    let trimmed = iri.trim_end_matches(['/', '#']);
    match trimmed.rfind(['/', '#']) {
        Some(pos) if pos + 1 < trimmed.len() => &trimmed[pos + 1..],
        _ => trimmed,
    }
}

/// Renders `subject -> predicate -> object` from IRI local names; literals verbatim.
pub fn verbalize_triple(t: &Triple) -> String {
    let object = match &t.object {
        Term::Iri { value } => local_name(value),
        Term::Literal { value, .. } => value.as_str(),
    };
    format!("{} -> {} -> {}", local_name(&t.subject), local_name(&t.predicate), object)
}

/// Lowercased alphanumeric word set.
pub fn word_set(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard similarity of the two texts' word sets; 0 when both are empty.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let a = word_set(a);
    let b = word_set(b);
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[async_trait]
pub trait RelevanceScorer: Send + Sync {
    /// One finite score per candidate, in input order.
    async fn score(&self, claim: &str, candidates: &[String]) -> Result<Vec<f64>, RankingError>;
}

/// Offline scorer: word-set Jaccard overlap between claim and evidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

#[async_trait]
impl RelevanceScorer for LexicalScorer {
    async fn score(&self, claim: &str, candidates: &[String]) -> Result<Vec<f64>, RankingError> {
        Ok(candidates.iter().map(|c| jaccard(claim, c)).collect())
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Cross-encoder served over HTTP: `{"claim", "candidates"}` -> `{"scores"}`.
pub struct RemoteCrossEncoder {
    transport: Arc<dyn JsonTransport>,
    lexical_fallback: bool,
}

impl RemoteCrossEncoder {
    pub fn new(transport: Arc<dyn JsonTransport>) -> Self {
        Self {
            transport,
            lexical_fallback: false,
        }
    }

    /// Score with [`LexicalScorer`] when the remote service cannot be reached.
    pub fn with_lexical_fallback(mut self, allowed: bool) -> Self {
        self.lexical_fallback = allowed;
        self
    }

    async fn remote(&self, claim: &str, candidates: &[String]) -> Result<Vec<f64>, RankingError> {
        let resp = self
            .transport
            .post_json("score", &json!({ "claim": claim, "candidates": candidates }))
            .await
            .map_err(|e| RankingError::ScorerUnavailable(e.to_string()))?;
        let parsed: ScoreResponse = serde_json::from_value(resp)
            .map_err(|e| RankingError::ScorerUnavailable(format!("bad response: {e}")))?;
        if parsed.scores.len() != candidates.len() {
            return Err(RankingError::ScorerUnavailable(format!(
                "expected {} scores, got {}",
                candidates.len(),
                parsed.scores.len()
            )));
        }
        if parsed.scores.iter().any(|s| !s.is_finite()) {
            return Err(RankingError::ScorerUnavailable("non-finite score".into()));
        }
        Ok(parsed.scores)
    }
}

#[async_trait]
impl RelevanceScorer for RemoteCrossEncoder {
    async fn score(&self, claim: &str, candidates: &[String]) -> Result<Vec<f64>, RankingError> {
        match self.remote(claim, candidates).await {
            Err(e) if self.lexical_fallback => {
                tracing::warn!(error = %e, "cross-encoder unavailable, using lexical scorer");
                LexicalScorer.score(claim, candidates).await
            }
            other => other,
        }
    }
}

/// Scores each candidate against the claim, preserving order.
pub async fn score_candidates(
    scorer: &dyn RelevanceScorer,
    claim: &str,
    candidates: Vec<EvidenceItem>,
) -> Result<Vec<ScoredCandidate>, RankingError> {
    if candidates.is_empty() {
        return Err(RankingError::NoCandidates);
    }
    let texts: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
    let scores = scorer.score(claim, &texts).await?;
    if scores.len() != candidates.len() || scores.iter().any(|s| !s.is_finite()) {
        return Err(RankingError::ScorerUnavailable("scorer broke the length/finite contract".into()));
    }
    Ok(candidates
        .into_iter()
        .zip(scores)
        .map(|(mut item, score)| {
            item.score = score;
            ScoredCandidate { item, score }
        })
        .collect())
}

/// The `k` highest-scoring items, descending; ties keep input order.
///
/// # Panics
/// If `k == 0`.
pub fn select_top_k(mut scored: Vec<ScoredCandidate>, k: usize) -> Vec<EvidenceItem> {
    assert!(k >= 1, "k must be at least 1");
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored
        .into_iter()
        .take(k)
        .map(|c| {
            let mut item = c.item;
            item.score = c.score;
            item
        })
        .collect()
}

/// Drops items whose text repeats an earlier item's text.
pub fn dedup_by_text(items: Vec<EvidenceItem>) -> Vec<EvidenceItem> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|i| seen.insert(i.text.clone()))
        .collect()
}

pub struct EvidenceRanker {
    scorer: Arc<dyn RelevanceScorer>,
    k: usize,
}

impl EvidenceRanker {
    pub fn new(scorer: Arc<dyn RelevanceScorer>, k: usize) -> Result<Self, RankingError> {
        if k == 0 {
            return Err(RankingError::InvalidK);
        }
        Ok(Self { scorer, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn scorer(&self) -> &dyn RelevanceScorer {
        self.scorer.as_ref()
    }

    /// Dedup, score and keep the top k.
    pub async fn rank(&self, claim: &str, candidates: Vec<EvidenceItem>) -> Result<Vec<EvidenceItem>, RankingError> {
        let candidates = dedup_by_text(candidates);
        let scored = score_candidates(self.scorer.as_ref(), claim, candidates).await?;
        Ok(select_top_k(scored, self.k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Direction;
    use crate::transport::{Cassette, CassetteEntry, CassetteTransport};

    const RES: &str = "http://dbpedia.org/resource/";
    const ONT: &str = "http://dbpedia.org/ontology/";

    fn t(s: &str, p: &str, o: Term) -> Triple {
        Triple::new(format!("{RES}{s}"), format!("{ONT}{p}"), o, Direction::EntityAsSubject).unwrap()
    }

    fn snippet(text: &str) -> EvidenceItem {
        EvidenceItem::from_snippet(text, format!("https://example.org/{}", text.len()), "")
    }

    fn scored(scores: &[f64]) -> Vec<ScoredCandidate> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredCandidate {
                item: snippet(&format!("item{i}")),
                score: s,
            })
            .collect()
    }

    #[test]
    fn verbalizes_examples() {
        assert_eq!(
            verbalize_triple(&t("Barack_Obama", "birthPlace", Term::iri(format!("{RES}Hawaii")))),
            "Barack_Obama -> birthPlace -> Hawaii"
        );
        assert_eq!(
            verbalize_triple(&t("Arya_Stark", "creator", Term::iri(format!("{RES}George_R._R._Martin")))),
            "Arya_Stark -> creator -> George_R._R._Martin"
        );
        assert_eq!(verbalize_triple(&t("X", "population", Term::literal("42"))), "X -> population -> 42");
        let hash = Triple::new(
            "http://x.org/a/",
            "http://www.w3.org/2000/01/rdf-schema#label",
            Term::lang_literal("A", "en"),
            Direction::EntityAsSubject,
        )
        .unwrap();
        assert_eq!(verbalize_triple(&hash), "a -> label -> A");
    }

    #[test]
    fn local_names() {
        assert_eq!(local_name("http://x/y/z"), "z");
        assert_eq!(local_name("http://x/y#z"), "z");
        assert_eq!(local_name("urn:isbn"), "urn:isbn");
    }

    #[tokio::test]
    async fn lexical_scores_by_overlap() {
        let s = LexicalScorer
            .score("a b c", &["a b c".to_string(), "x y z".to_string()])
            .await
            .unwrap();
        // {a,b,c} vs itself = 3/3; vs {x,y,z} = 0/6
        assert_eq!(s, vec![1.0, 0.0]);
        let s = LexicalScorer.score("A, b!", &["b c".to_string()]).await.unwrap();
        assert_eq!(s, vec![1.0 / 3.0]);
    }

    #[tokio::test]
    async fn score_candidates_contract() {
        let one = score_candidates(&LexicalScorer, "claim", vec![snippet("claim text")]).await.unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].score.is_finite());
        assert_eq!(
            score_candidates(&LexicalScorer, "claim", vec![]).await,
            Err(RankingError::NoCandidates)
        );
    }

    #[tokio::test]
    async fn remote_replays_recorded_scores_bit_exactly() {
        let recorded = [0.7316789149284363_f64, -3.0000000000000004, 1e-300];
        let cassette = Cassette::from_entries([CassetteEntry {
            path: "score".into(),
            request: json!({"claim": "c", "candidates": ["a", "b", "d"]}),
            response: json!({ "scores": recorded }),
        }]);
        let scorer = RemoteCrossEncoder::new(Arc::new(CassetteTransport::new(cassette)));
        let got = scorer
            .score("c", &["a".into(), "b".into(), "d".into()])
            .await
            .unwrap();
        for (g, r) in got.iter().zip(recorded) {
            assert_eq!(g.to_bits(), r.to_bits());
        }
    }

    #[tokio::test]
    async fn remote_failure_and_optional_fallback() {
        let empty = Arc::new(CassetteTransport::new(Cassette::new()));
        let strict = RemoteCrossEncoder::new(empty.clone());
        assert!(matches!(
            strict.score("a", &["a".into()]).await,
            Err(RankingError::ScorerUnavailable(_))
        ));
        let lenient = RemoteCrossEncoder::new(empty).with_lexical_fallback(true);
        assert_eq!(lenient.score("a", &["a".into()]).await.unwrap(), vec![1.0]);
    }

    #[tokio::test]
    async fn remote_length_mismatch_is_rejected() {
        let cassette = Cassette::from_entries([CassetteEntry {
            path: "score".into(),
            request: json!({"claim": "c", "candidates": ["a", "b"]}),
            response: json!({"scores": [1.0]}),
        }]);
        let scorer = RemoteCrossEncoder::new(Arc::new(CassetteTransport::new(cassette)));
        assert!(scorer.score("c", &["a".into(), "b".into()]).await.is_err());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(select_top_k(scored(&[0.1, 0.2, 0.3]), 5).len(), 3);

        let top = select_top_k(scored(&[0.9, 0.1, 0.5]), 2);
        let texts: Vec<&str> = top.iter().map(|i| i.text.as_str()).collect();
        assert_eq!(texts, vec!["item0", "item2"]);
        assert_eq!(top[0].score, 0.9);

        let tie = select_top_k(scored(&[0.5, 0.5]), 1);
        assert_eq!(tie[0].text, "item0");
    }

    #[test]
    #[should_panic]
    fn top_k_zero_panics() {
        select_top_k(scored(&[1.0]), 0);
    }

    #[test]
    fn dedup_keeps_first() {
        let items = vec![snippet("a"), snippet("b"), snippet("a")];
        let texts: Vec<String> = dedup_by_text(items).into_iter().map(|i| i.text).collect();
        assert_eq!(texts, vec!["a", "b"]);
    }

    #[test]
    fn config_validates_k() {
        assert_eq!(RankingConfig::new(0, ScorerBackend::LexicalFallback), Err(RankingError::InvalidK));
        assert_eq!(RankingConfig::default().k, 5);
        assert!(EvidenceRanker::new(Arc::new(LexicalScorer), 0).is_err());
    }
}
