//! Minimal SPARQL 1.1 protocol client returning JSON result bindings.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::domain::Term;
use crate::transport::{JsonTransport, TransportError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SparqlError {
    #[error("SPARQL endpoint error: {0}")]
    Endpoint(String),
    #[error("malformed SPARQL results: {0}")]
    MalformedResponse(String),
}

impl From<TransportError> for SparqlError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::InvalidJson(msg) => SparqlError::MalformedResponse(msg),
            other => SparqlError::Endpoint(other.to_string()),
        }
    }
}

/// One row of a SELECT result; unbound variables are absent.
pub type Binding = BTreeMap<String, Term>;

#[async_trait]
pub trait SparqlEndpoint: Send + Sync {
    async fn select(&self, query: &str) -> Result<Vec<Binding>, SparqlError>;
}

/// Collapses runs of whitespace so recorded queries survive reformatting.
pub fn normalize_query(query: &str) -> String {
    query.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Deserialize)]
struct ResultsDoc {
    results: ResultsBody,
}

#[derive(Deserialize)]
struct ResultsBody {
    bindings: Vec<BTreeMap<String, RawTerm>>,
}

#[derive(Deserialize)]
struct RawTerm {
    #[serde(rename = "type")]
    kind: String,
    value: String,
    #[serde(rename = "xml:lang")]
    lang: Option<String>,
    datatype: Option<String>,
}

/// Parses an `application/sparql-results+json` document into bindings.
pub fn parse_results(doc: &Value) -> Result<Vec<Binding>, SparqlError> {
    let parsed: ResultsDoc = serde_json::from_value(doc.clone())
        .map_err(|e| SparqlError::MalformedResponse(e.to_string()))?;
    parsed
        .results
        .bindings
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(var, raw)| {
                    let term = match raw.kind.as_str() {
                        "uri" => Term::Iri { value: raw.value },
                        "literal" | "typed-literal" => Term::Literal {
                            value: raw.value,
                            datatype: raw.datatype,
                            lang: raw.lang,
                        },
                        // Blank nodes have no stable identity across queries.
                        "bnode" => Term::Iri {
                            value: format!("_:{}", raw.value),
                        },
                        other => {
                            return Err(SparqlError::MalformedResponse(format!(
                                "unknown term type {other:?} for ?{var}"
                            )))
                        }
                    };
                    Ok((var, term))
                })
                .collect()
        })
        .collect()
}

/// Live endpoint speaking the SPARQL protocol over HTTP POST.
pub struct HttpSparqlEndpoint {
    client: reqwest::Client,
    url: String,
    timeout: Duration,
    retries: u32,
    in_flight: Semaphore,
}

impl HttpSparqlEndpoint {
    pub fn new(url: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("reqwest client with static configuration"),
            url: url.into(),
            timeout,
            retries: 1,
            in_flight: Semaphore::new(max_in_flight.max(1)),
        }
    }

    async fn once(&self, query: &str) -> Result<Value, SparqlError> {
        let resp = self
            .client
            .post(&self.url)
            .header("Accept", "application/sparql-results+json")
            .form(&[("query", query)])
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    SparqlError::Endpoint(format!("timed out after {:?}", self.timeout))
                } else {
                    SparqlError::Endpoint(e.to_string())
                }
            })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| SparqlError::Endpoint(e.to_string()))?;
        if !status.is_success() {
            return Err(SparqlError::Endpoint(format!("HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| SparqlError::MalformedResponse(e.to_string()))
    }
}

#[async_trait]
impl SparqlEndpoint for HttpSparqlEndpoint {
    async fn select(&self, query: &str) -> Result<Vec<Binding>, SparqlError> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let mut attempt = 0;
        let doc = loop {
            match self.once(query).await {
                Err(SparqlError::Endpoint(e)) if attempt < self.retries => {
                    tracing::debug!(error = %e, "retrying SPARQL query");
                    attempt += 1;
                }
                other => break other?,
            }
        };
        parse_results(&doc)
    }
}

/// Path under which SPARQL exchanges are stored in a cassette.
pub const CASSETTE_PATH: &str = "sparql";

/// Replays recorded query/response pairs through a [`JsonTransport`].
///
/// Requests are keyed as `{"query": <normalized query>}` at path `sparql`.
pub struct ReplaySparqlEndpoint {
    transport: Arc<dyn JsonTransport>,
}

impl ReplaySparqlEndpoint {
    pub fn new(transport: Arc<dyn JsonTransport>) -> Self {
        Self { transport }
    }
}

#[async_trait]
impl SparqlEndpoint for ReplaySparqlEndpoint {
    async fn select(&self, query: &str) -> Result<Vec<Binding>, SparqlError> {
        let doc = self
            .transport
            .post_json(CASSETTE_PATH, &json!({ "query": normalize_query(query) }))
            .await?;
        parse_results(&doc)
    }
}
