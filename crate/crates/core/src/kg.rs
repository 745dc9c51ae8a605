//! One-hop triple retrieval and meta-predicate filtering.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use crate::domain::{is_valid_iri, Direction, Term, Triple};
use crate::sparql::{SparqlEndpoint, SparqlError};

pub const DEFAULT_TRIPLE_CAP: usize = 2000;

const DEFAULT_BLACKLIST: &str = include_str!("../data/predicate_blacklist.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KgError {
    #[error("invalid entity IRI {0:?}")]
    InvalidIri(String),
    #[error(transparent)]
    Sparql(#[from] SparqlError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("blacklist line {line}: {message}")]
pub struct BlacklistParseError {
    pub line: usize,
    pub message: String,
}

/// Predicates that carry page bookkeeping rather than facts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredicateBlacklist {
    exact: HashSet<String>,
    prefixes: Vec<String>,
    english_only: HashSet<String>,
}

fn strip_brackets(s: &str) -> &str {
    s.strip_prefix('<')
        .and_then(|s| s.strip_suffix('>'))
        .unwrap_or(s)
}

impl PredicateBlacklist {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, BlacklistParseError> {
        let mut out = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| BlacklistParseError {
                line: idx + 1,
                message: message.to_string(),
            };
            if let Some(rest) = line.strip_prefix("@english-only") {
                let iri = strip_brackets(rest.trim());
                if !is_valid_iri(iri) {
                    return Err(err("expected an IRI after @english-only"));
                }
                out.english_only.insert(iri.to_string());
            } else if let Some(prefix) = line.strip_suffix('*') {
                let prefix = prefix.trim_start_matches('<');
                if prefix.is_empty() {
                    return Err(err("empty prefix"));
                }
                out.prefixes.push(prefix.to_string());
            } else {
                let iri = strip_brackets(line);
                if !is_valid_iri(iri) {
                    return Err(err("not an IRI"));
                }
                out.exact.insert(iri.to_string());
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// The shipped default list.
    pub fn default_list() -> Self {
        Self::parse(DEFAULT_BLACKLIST).expect("bundled blacklist parses")
    }

    pub fn add_exact(&mut self, iri: impl Into<String>) {
        self.exact.insert(iri.into());
    }

    pub fn add_prefix(&mut self, prefix: impl Into<String>) {
        self.prefixes.push(prefix.into());
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty() && self.prefixes.is_empty() && self.english_only.is_empty()
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.prefixes.len() + self.english_only.len()
    }

    pub fn blocks_predicate(&self, predicate: &str) -> bool {
        self.exact.contains(predicate) || self.prefixes.iter().any(|p| predicate.starts_with(p.as_str()))
    }

    pub fn blocks(&self, triple: &Triple) -> bool {
        if self.blocks_predicate(&triple.predicate) {
            return true;
        }
        if self.english_only.contains(&triple.predicate) {
            if let Some(lang) = triple.object.lang() {
                let lang = lang.to_ascii_lowercase();
                return !(lang == "en" || lang.starts_with("en-"));
            }
        }
        false
    }
}

/// Order-preserving removal of blacklisted triples.
pub fn filter_meta_predicates(triples: Vec<Triple>, blacklist: &PredicateBlacklist) -> Vec<Triple> {
    triples.into_iter().filter(|t| !blacklist.blocks(t)).collect()
}

/// Query text for all triples with `entity` in subject or object position.
pub fn one_hop_query(entity: &str, limit: usize) -> String {
    format!(
        "SELECT ?s ?p ?o WHERE {{ {{ <{entity}> ?p ?o . }} UNION {{ ?s ?p <{entity}> . }} }} LIMIT {limit}"
    )
}

pub struct KgRetriever {
    endpoint: Arc<dyn SparqlEndpoint>,
    cap: usize,
}

impl KgRetriever {
    pub fn new(endpoint: Arc<dyn SparqlEndpoint>) -> Self {
        Self {
            endpoint,
            cap: DEFAULT_TRIPLE_CAP,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap.max(1);
        self
    }

    /// All one-hop triples of `entity_iri`, tagged with direction, deduplicated,
    /// truncated to the configured cap in endpoint order.
    pub async fn retrieve_one_hop(&self, entity_iri: &str) -> Result<Vec<Triple>, KgError> {
        if !is_valid_iri(entity_iri) {
            return Err(KgError::InvalidIri(entity_iri.to_string()));
        }
        let rows = self
            .endpoint
            .select(&one_hop_query(entity_iri, self.cap + 1))
            .await?;

        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut skipped = 0usize;
        for row in rows {
            let Some(Term::Iri { value: predicate }) = row.get("p") else {
                return Err(SparqlError::MalformedResponse("row without IRI ?p".into()).into());
            };
            let built = match (row.get("s"), row.get("o")) {
                (None, Some(object)) => Triple::new(
                    entity_iri,
                    predicate.clone(),
                    object.clone(),
                    Direction::EntityAsSubject,
                ),
                (Some(Term::Iri { value: subject }), None) => Triple::new(
                    subject.clone(),
                    predicate.clone(),
                    Term::iri(entity_iri),
                    Direction::EntityAsObject,
                ),
                _ => {
                    return Err(SparqlError::MalformedResponse(
                        "row must bind exactly one of ?s and ?o".into(),
                    )
                    .into())
                }
            };
            match built {
                Ok(t) => {
                    if seen.insert(t.clone()) {
                        out.push(t);
                    }
                }
                // blank nodes and other non-IRI neighbours
                Err(_) => skipped += 1,
            }
        }
        if skipped > 0 {
            tracing::debug!(entity = entity_iri, skipped, "dropped rows with non-IRI terms");
        }
        if out.len() > self.cap {
            tracing::warn!(
                entity = entity_iri,
                cap = self.cap,
                "one-hop neighbourhood truncated"
            );
            out.truncate(self.cap);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::Binding;
    use async_trait::async_trait;

    const RES: &str = "http://dbpedia.org/resource/";
    const ONT: &str = "http://dbpedia.org/ontology/";

    struct StaticEndpoint(Vec<Binding>);

    #[async_trait]
    impl SparqlEndpoint for StaticEndpoint {
        async fn select(&self, _query: &str) -> Result<Vec<Binding>, SparqlError> {
            Ok(self.0.clone())
        }
    }

    fn out_row(p: &str, o: Term) -> Binding {
        [("p".to_string(), Term::iri(p)), ("o".to_string(), o)].into()
    }

    fn in_row(s: &str, p: &str) -> Binding {
        [("s".to_string(), Term::iri(s)), ("p".to_string(), Term::iri(p))].into()
    }

    fn triple(p: &str) -> Triple {
        Triple::new(
            format!("{RES}X"),
            p,
            Term::iri(format!("{RES}Y")),
            Direction::EntityAsSubject,
        )
        .unwrap()
    }

    #[test]
    fn default_list_parses_and_blocks_bookkeeping() {
        let bl = PredicateBlacklist::default_list();
        assert!(!bl.is_empty());
        assert!(bl.blocks_predicate("http://dbpedia.org/ontology/wikiPageWikiLink"));
        assert!(bl.blocks_predicate("http://dbpedia.org/ontology/wikiPageRevisionID"));
        assert!(bl.blocks_predicate("http://www.w3.org/2002/07/owl#sameAs"));
        assert!(bl.blocks_predicate("http://purl.org/dc/terms/subject"));
        assert!(!bl.blocks_predicate("http://dbpedia.org/ontology/birthPlace"));
        assert!(!bl.blocks_predicate("http://dbpedia.org/ontology/creator"));
    }

    #[test]
    fn english_only_drops_other_languages() {
        let bl = PredicateBlacklist::default_list();
        let abs = |lang: Option<&str>| {
            let object = match lang {
                Some(l) => Term::lang_literal("text", l),
                None => Term::literal("text"),
            };
            Triple::new(format!("{RES}X"), format!("{ONT}abstract"), object, Direction::EntityAsSubject)
                .unwrap()
        };
        assert!(!bl.blocks(&abs(Some("en"))));
        assert!(!bl.blocks(&abs(Some("en-GB"))));
        assert!(!bl.blocks(&abs(None)));
        assert!(bl.blocks(&abs(Some("de"))));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = PredicateBlacklist::parse("# c\nhttp://ok/p\nnot an iri\n").unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn filter_identity_annihilation_and_mixed() {
        let preds = ["http://p/a", "http://p/b", "http://q/c", "http://p/d", "http://q/e"];
        let triples: Vec<Triple> = preds.iter().map(|p| triple(p)).collect();

        assert_eq!(filter_meta_predicates(triples.clone(), &PredicateBlacklist::empty()), triples);

        let mut all = PredicateBlacklist::empty();
        all.add_prefix("http://");
        assert!(filter_meta_predicates(triples.clone(), &all).is_empty());

        let mut two = PredicateBlacklist::empty();
        two.add_exact("http://p/b");
        two.add_exact("http://q/e");
        let kept = filter_meta_predicates(triples.clone(), &two);
        let kept_preds: Vec<&str> = kept.iter().map(|t| t.predicate.as_str()).collect();
        assert_eq!(kept_preds, vec!["http://p/a", "http://q/c", "http://p/d"]);
        assert_eq!(filter_meta_predicates(kept.clone(), &two), kept);
    }

    #[tokio::test]
    async fn retrieves_both_directions() {
        let obama = format!("{RES}Barack_Obama");
        let ep = StaticEndpoint(vec![
            out_row(&format!("{ONT}birthPlace"), Term::iri(format!("{RES}Hawaii"))),
            out_row(&format!("{ONT}birthDate"), Term::literal("1961-08-04")),
            in_row(&format!("{RES}Michelle_Obama"), &format!("{ONT}spouse")),
            out_row(&format!("{ONT}birthPlace"), Term::iri(format!("{RES}Hawaii"))),
        ]);
        let triples = KgRetriever::new(Arc::new(ep)).retrieve_one_hop(&obama).await.unwrap();
        assert_eq!(triples.len(), 3);
        assert_eq!(triples[0].direction, Direction::EntityAsSubject);
        assert_eq!(triples[1].direction, Direction::EntityAsSubject);
        assert_eq!(triples[2].direction, Direction::EntityAsObject);
        assert_eq!(triples[2].subject, format!("{RES}Michelle_Obama"));
        assert_eq!(triples[2].object, Term::iri(&obama));
        for t in &triples {
            assert!(t.subject == obama || t.object == Term::iri(&obama));
        }
    }

    #[tokio::test]
    async fn truncates_to_cap_and_rejects_bad_rows() {
        let rows: Vec<Binding> = (0..10)
            .map(|i| out_row(&format!("{ONT}p{i}"), Term::literal(i.to_string())))
            .collect();
        let r = KgRetriever::new(Arc::new(StaticEndpoint(rows))).with_cap(4);
        let got = r.retrieve_one_hop(&format!("{RES}E")).await.unwrap();
        assert_eq!(got.len(), 4);
        assert_eq!(got[3].predicate, format!("{ONT}p3"));

        let bad = StaticEndpoint(vec![[("p".to_string(), Term::iri("http://p"))].into()]);
        let err = KgRetriever::new(Arc::new(bad)).retrieve_one_hop(&format!("{RES}E")).await;
        assert!(matches!(err, Err(KgError::Sparql(SparqlError::MalformedResponse(_)))));

        let err = KgRetriever::new(Arc::new(StaticEndpoint(vec![])))
            .retrieve_one_hop("not an iri")
            .await;
        assert!(matches!(err, Err(KgError::InvalidIri(_))));
    }

    #[tokio::test]
    async fn empty_graph_gives_empty_list() {
        let r = KgRetriever::new(Arc::new(StaticEndpoint(vec![])));
        assert!(r.retrieve_one_hop(&format!("{RES}Nobody")).await.unwrap().is_empty());
    }
}
