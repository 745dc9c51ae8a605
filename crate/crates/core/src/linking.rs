//! Entity mention detection, Wikidata Q-ID resolution and DBpedia mapping.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::{is_valid_iri, Claim, Term};
use crate::sparql::{SparqlEndpoint, SparqlError};
use crate::transport::JsonTransport;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinkError {
    #[error("claim text is empty")]
    EmptyClaim,
    #[error("malformed Wikidata id {0:?}")]
    MalformedQid(String),
    #[error("linker backend failed: {0}")]
    Backend(String),
    #[error("both entity linkers are unavailable (primary: {primary}; fallback: {fallback})")]
    LinkerUnavailable { primary: String, fallback: String },
    #[error("sameAs lookup failed: {0}")]
    Endpoint(String),
}

impl From<SparqlError> for LinkError {
    fn from(e: SparqlError) -> Self {
        LinkError::Endpoint(e.to_string())
    }
}

/// A Wikidata entity identifier such as `Q76`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Qid(String);

impl Qid {
    pub fn parse(raw: &str) -> Result<Self, LinkError> {
        let raw = raw.trim();
        let digits = raw.strip_prefix('Q').unwrap_or("");
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(LinkError::MalformedQid(raw.to_string()));
        }
        Ok(Qid(raw.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn wikidata_iri(&self) -> String {
        format!("http://www.wikidata.org/entity/{}", self.0)
    }
}

impl TryFrom<String> for Qid {
    type Error = LinkError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Qid::parse(&value)
    }
}

impl From<Qid> for String {
    fn from(q: Qid) -> Self {
        q.0
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkerKind {
    Primary,
    Fallback,
}

/// A raw mention from a linker backend. Offsets are in characters, end-exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub qid: Option<String>,
    #[serde(default)]
    pub dbpedia_iri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedEntity {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub qid: Qid,
    pub dbpedia_iri: Option<String>,
    pub linker: LinkerKind,
}

impl LinkedEntity {
    /// Local name of the DBpedia IRI, e.g. `Arya_Stark`.
    pub fn dbpedia_name(&self) -> Option<&str> {
        self.dbpedia_iri
            .as_deref()
            .map(|iri| iri.rsplit(['/', '#']).next().unwrap_or(iri))
    }
}

#[async_trait]
pub trait EntityLinker: Send + Sync {
    async fn detect(&self, text: &str) -> Result<Vec<Mention>, LinkError>;
}

/// Linker that never finds anything.
pub struct NullLinker;

#[async_trait]
impl EntityLinker for NullLinker {
    async fn detect(&self, _text: &str) -> Result<Vec<Mention>, LinkError> {
        Ok(Vec::new())
    }
}

/// Remote linker service.
///
/// Request `{"text": str}`, response `{"entities": [{"surface", "start", "end", "qid"}]}`.
pub struct HttpLinker {
    transport: Arc<dyn JsonTransport>,
    path: String,
}

impl HttpLinker {
    pub fn new(transport: Arc<dyn JsonTransport>, path: impl Into<String>) -> Self {
        Self {
            transport,
            path: path.into(),
        }
    }
}

#[derive(Deserialize)]
struct LinkerResponse {
    entities: Vec<Mention>,
}

#[async_trait]
impl EntityLinker for HttpLinker {
    async fn detect(&self, text: &str) -> Result<Vec<Mention>, LinkError> {
        let resp = self
            .transport
            .post_json(&self.path, &json!({ "text": text }))
            .await
            .map_err(|e| LinkError::Backend(e.to_string()))?;
        let parsed: LinkerResponse =
            serde_json::from_value(resp).map_err(|e| LinkError::Backend(e.to_string()))?;
        Ok(parsed.entities)
    }
}

#[derive(Debug, Clone)]
struct DictEntry {
    folded: Vec<char>,
    qid: String,
    dbpedia_iri: Option<String>,
}

/// Deterministic longest-match linker over a surface-form table.
///
/// The TSV format is `surface \t qid \t dbpedia_iri`; the IRI column may be empty.
#[derive(Debug, Clone, Default)]
pub struct DictionaryLinker {
    entries: Vec<DictEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum DictionaryError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

fn fold(s: &str) -> Vec<char> {
    s.chars().flat_map(char::to_lowercase).collect()
}

impl DictionaryLinker {
    pub fn parse_tsv(text: &str) -> Result<Self, DictionaryError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let err = |message: String| DictionaryError::Format {
                line: idx + 1,
                message,
            };
            if cols.len() < 2 || cols.len() > 3 {
                return Err(err(format!("expected 2 or 3 tab-separated columns, got {}", cols.len())));
            }
            let surface = cols[0].trim();
            if surface.is_empty() {
                return Err(err("empty surface form".into()));
            }
            let qid = Qid::parse(cols[1]).map_err(|e| err(e.to_string()))?;
            let iri = cols.get(2).map(|s| s.trim()).filter(|s| !s.is_empty());
            if let Some(iri) = iri {
                if !is_valid_iri(iri) {
                    return Err(err(format!("invalid IRI {iri:?}")));
                }
            }
            entries.push(DictEntry {
                folded: fold(surface),
                qid: qid.0,
                dbpedia_iri: iri.map(str::to_string),
            });
        }
        // longest surface first so "George R. R. Martin" beats "George"
        entries.sort_by(|a, b| b.folded.len().cmp(&a.folded.len()));
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, DictionaryError> {
        let text = std::fs::read_to_string(path).map_err(|source| DictionaryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_tsv(&text)
    }

    pub fn find(&self, text: &str) -> Vec<Mention> {
        let chars: Vec<char> = text.chars().collect();
        let folded: Vec<char> = chars
            .iter()
            .map(|c| c.to_lowercase().next().unwrap_or(*c))
            .collect();
        let is_word = |c: char| c.is_alphanumeric();
        let mut out = Vec::new();
        let mut i = 0;
        while i < folded.len() {
            let at_boundary = i == 0 || !is_word(folded[i - 1]);
            let hit = at_boundary
                .then(|| {
                    self.entries.iter().find(|e| {
                        let end = i + e.folded.len();
                        end <= folded.len()
                            && folded[i..end] == e.folded[..]
                            && (end == folded.len() || !is_word(folded[end]) || !is_word(folded[end - 1]))
                    })
                })
                .flatten();
            match hit {
                Some(e) => {
                    let end = i + e.folded.len();
                    out.push(Mention {
                        surface: chars[i..end].iter().collect(),
                        start: i,
                        end,
                        qid: Some(e.qid.clone()),
                        dbpedia_iri: e.dbpedia_iri.clone(),
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }
}

#[async_trait]
impl EntityLinker for DictionaryLinker {
    async fn detect(&self, text: &str) -> Result<Vec<Mention>, LinkError> {
        Ok(self.find(text))
    }
}

#[async_trait]
pub trait SameAsResolver: Send + Sync {
    async fn dbpedia_iri(&self, qid: &Qid) -> Result<Option<String>, LinkError>;
}

pub const DBPEDIA_RESOURCE: &str = "http://dbpedia.org/resource/";

/// Query text for the DBpedia resource declared `owl:sameAs` a Wikidata entity.
pub fn same_as_query(qid: &Qid) -> String {
    format!(
        "SELECT ?s WHERE {{ ?s <http://www.w3.org/2002/07/owl#sameAs> <{}> . FILTER(STRSTARTS(STR(?s), \"{DBPEDIA_RESOURCE}\")) }}",
        qid.wikidata_iri()
    )
}

pub struct SparqlSameAs {
    endpoint: Arc<dyn SparqlEndpoint>,
}

impl SparqlSameAs {
    pub fn new(endpoint: Arc<dyn SparqlEndpoint>) -> Self {
        Self { endpoint }
    }
}

#[async_trait]
impl SameAsResolver for SparqlSameAs {
    async fn dbpedia_iri(&self, qid: &Qid) -> Result<Option<String>, LinkError> {
        let rows = self.endpoint.select(&same_as_query(qid)).await?;
        // several matches happen for redirect duplicates; pick a stable one
        Ok(rows
            .iter()
            .filter_map(|row| match row.get("s") {
                Some(Term::Iri { value }) => Some(value.clone()),
                _ => None,
            })
            .min())
    }
}

pub struct EntityLinking {
    primary: Arc<dyn EntityLinker>,
    fallback: Arc<dyn EntityLinker>,
    same_as: Arc<dyn SameAsResolver>,
}

impl EntityLinking {
    pub fn new(
        primary: Arc<dyn EntityLinker>,
        fallback: Arc<dyn EntityLinker>,
        same_as: Arc<dyn SameAsResolver>,
    ) -> Self {
        Self {
            primary,
            fallback,
            same_as,
        }
    }

    /// Maps a Q-ID to its DBpedia resource, if one is declared.
    pub async fn map_to_dbpedia(&self, qid: &Qid) -> Result<Option<String>, LinkError> {
        self.same_as.dbpedia_iri(qid).await
    }

    /// Links the claim's mentions. The fallback linker runs only when the
    /// primary returns nothing (or fails); mentions without a Q-ID are dropped
    /// and repeated Q-IDs are collapsed onto their first mention.
    pub async fn link_entities(&self, claim: &Claim) -> Result<Vec<LinkedEntity>, LinkError> {
        let text = claim.text.trim();
        if text.is_empty() {
            return Err(LinkError::EmptyClaim);
        }
        let char_len = claim.text.chars().count();

        let (mentions, kind) = match self.primary.detect(&claim.text).await {
            Ok(m) if !m.is_empty() => (m, LinkerKind::Primary),
            primary => {
                let primary_err = primary.err();
                match self.fallback.detect(&claim.text).await {
                    Ok(m) => (m, LinkerKind::Fallback),
                    Err(fallback_err) => match primary_err {
                        Some(p) => {
                            return Err(LinkError::LinkerUnavailable {
                                primary: p.to_string(),
                                fallback: fallback_err.to_string(),
                            })
                        }
                        None => {
                            tracing::warn!(error = %fallback_err, "fallback linker failed");
                            (Vec::new(), LinkerKind::Fallback)
                        }
                    },
                }
            }
        };

        let mut seen = HashSet::new();
        let mut entities = Vec::new();
        for m in mentions {
            if m.start >= m.end || m.end > char_len {
                tracing::warn!(surface = %m.surface, "mention offsets outside claim; dropped");
                continue;
            }
            let Some(raw_qid) = m.qid.as_deref() else {
                continue;
            };
            let Ok(qid) = Qid::parse(raw_qid) else {
                tracing::warn!(qid = raw_qid, "malformed Q-ID from linker; dropped");
                continue;
            };
            if !seen.insert(qid.clone()) {
                continue;
            }
            entities.push(LinkedEntity {
                surface: m.surface,
                start: m.start,
                end: m.end,
                qid,
                dbpedia_iri: m.dbpedia_iri,
                linker: kind,
            });
        }

        let lookups = entities
            .iter()
            .map(|e| async move {
                match &e.dbpedia_iri {
                    Some(iri) => Ok(Some(iri.clone())),
                    None => self.same_as.dbpedia_iri(&e.qid).await,
                }
            });
        let resolved = futures::future::join_all(lookups).await;
        for (entity, iri) in entities.iter_mut().zip(resolved) {
            entity.dbpedia_iri = iri?;
        }
        Ok(entities)
    }
}
