//! Two-stage orchestration: KG pass first, one web fallback on NEI.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use serde::Serialize;

use crate::classify::chat::{ChatBackend, ChatRequest, ChatUnavailable};
use crate::classify::{
    ClassifierKind, ClassifyError, FixtureChat, LlmClassifier, NliBackend, NliClassifier, OpenAiChat, PromptStage,
    RemoteNli, VerdictClassifier,
};
use crate::config::{ConfigError, PipelineConfig, StageMode};
use crate::domain::{Claim, Diagnostics, EvidenceItem, Label, Stage, StageLatency, Verdict, VerificationResult};
use crate::kg::{filter_meta_predicates, KgRetriever, PredicateBlacklist};
use crate::linking::{DictionaryLinker, EntityLinker, EntityLinking, HttpLinker, NullLinker, SparqlSameAs};
use crate::ranking::{verbalize_triple, EvidenceRanker, LexicalScorer, RelevanceScorer, RemoteCrossEncoder};
use crate::sparql::{HttpSparqlEndpoint, ReplaySparqlEndpoint, SparqlEndpoint};
use crate::transport::{Cassette, CassetteTransport, HttpConfig, HttpTransport, JsonTransport};
use crate::web::{
    FixtureSearch, ProgrammableSearch, RateLimiter, SearchEngine, SearchError, WebError, WebFallback, WebOutcome,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("{error}")]
    Web {
        error: WebError,
        diagnostics: Box<Diagnostics>,
    },
    #[error("claim {claim_id} exceeded the {budget_ms} ms budget")]
    BudgetExceeded { claim_id: String, budget_ms: u64 },
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
}

impl PipelineError {
    pub fn diagnostics(&self) -> Option<&Diagnostics> {
        match self {
            PipelineError::Web { diagnostics, .. } => Some(diagnostics),
            _ => None,
        }
    }
}

/// Run counts, for checking stage invariants over batches.
#[derive(Debug, Default)]
pub struct StageCounters {
    claims: AtomicU64,
    kg_classifications: AtomicU64,
    web_runs: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub claims: u64,
    pub kg_classifications: u64,
    pub web_runs: u64,
    pub failures: u64,
}

impl StageCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            claims: self.claims.load(Ordering::SeqCst),
            kg_classifications: self.kg_classifications.load(Ordering::SeqCst),
            web_runs: self.web_runs.load(Ordering::SeqCst),
            failures: self.failures.load(Ordering::SeqCst),
        }
    }
}

/// Stands in for a backend whose credentials or URL are not configured.
#[derive(Debug, Clone)]
pub struct Unconfigured(pub String);

#[async_trait]
impl ChatBackend for Unconfigured {
    async fn complete(&self, _request: &ChatRequest) -> Result<String, ChatUnavailable> {
        Err(ChatUnavailable(self.0.clone()))
    }
}

#[async_trait]
impl SearchEngine for Unconfigured {
    async fn search(&self, _query: &str, _max_results: usize) -> Result<Vec<crate::web::Snippet>, SearchError> {
        Err(SearchError::SearchBackendUnavailable(self.0.clone()))
    }
}

/// Every external dependency of the pipeline.
#[derive(Clone)]
pub struct Backends {
    pub linking: Arc<EntityLinking>,
    pub sparql: Arc<dyn SparqlEndpoint>,
    pub blacklist: Arc<PredicateBlacklist>,
    pub scorer: Arc<dyn RelevanceScorer>,
    pub chat: Arc<dyn ChatBackend>,
    pub nli: Option<Arc<dyn NliBackend>>,
    pub search: Arc<dyn SearchEngine>,
    pub limiter: Arc<RateLimiter>,
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("{path}: {message}")]
    Fixture { path: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn fixture_err(path: &Path, e: impl std::fmt::Display) -> BuildError {
    BuildError::Fixture {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn load_cassette(path: &Path) -> Result<Option<Arc<dyn JsonTransport>>, BuildError> {
    if !path.exists() {
        return Ok(None);
    }
    let c = Cassette::load(path).map_err(|e| fixture_err(path, e))?;
    Ok(Some(Arc::new(CassetteTransport::new(c))))
}

fn load_blacklist(config: &PipelineConfig) -> Result<PredicateBlacklist, BuildError> {
    match &config.blacklist {
        Some(p) => PredicateBlacklist::load(p).map_err(|e| fixture_err(p, e)),
        None => Ok(PredicateBlacklist::default_list()),
    }
}

impl Backends {
    /// Replay backends from a fixture directory:
    /// `linker.tsv` (required), `linker_fallback.tsv`, `sparql.json`,
    /// `chat.json`, `search.json`, `scorer.json` and `nli.json`.
    /// Without `scorer.json` ranking uses the lexical scorer.
    pub fn from_fixture_dir(dir: &Path, config: &PipelineConfig) -> Result<Self, BuildError> {
        let linker_path = dir.join("linker.tsv");
        let primary = DictionaryLinker::load(&linker_path).map_err(|e| fixture_err(&linker_path, e))?;
        let fallback_path = dir.join("linker_fallback.tsv");
        let fallback: Arc<dyn EntityLinker> = if fallback_path.exists() {
            Arc::new(DictionaryLinker::load(&fallback_path).map_err(|e| fixture_err(&fallback_path, e))?)
        } else {
            Arc::new(NullLinker)
        };

        let sparql_transport =
            load_cassette(&dir.join("sparql.json"))?.unwrap_or_else(|| Arc::new(CassetteTransport::new(Cassette::new())));
        let sparql: Arc<dyn SparqlEndpoint> = Arc::new(ReplaySparqlEndpoint::new(sparql_transport));

        let chat_path = dir.join("chat.json");
        let chat: Arc<dyn ChatBackend> = if chat_path.exists() {
            Arc::new(FixtureChat::load(&chat_path).map_err(|e| fixture_err(&chat_path, e))?)
        } else {
            Arc::new(Unconfigured(format!("no chat fixture at {}", chat_path.display())))
        };

        let search_path = dir.join("search.json");
        let search: Arc<dyn SearchEngine> = if search_path.exists() {
            Arc::new(FixtureSearch::load(&search_path).map_err(|e| fixture_err(&search_path, e))?)
        } else {
            Arc::new(FixtureSearch::default())
        };

        let scorer: Arc<dyn RelevanceScorer> = match load_cassette(&dir.join("scorer.json"))? {
            Some(t) => Arc::new(RemoteCrossEncoder::new(t).with_lexical_fallback(config.lexical_fallback)),
            None => Arc::new(LexicalScorer),
        };
        let nli: Option<Arc<dyn NliBackend>> =
            load_cassette(&dir.join("nli.json"))?.map(|t| Arc::new(RemoteNli::new(t)) as Arc<dyn NliBackend>);

        Ok(Self {
            linking: Arc::new(EntityLinking::new(
                Arc::new(primary),
                fallback,
                Arc::new(SparqlSameAs::new(sparql.clone())),
            )),
            sparql,
            blacklist: Arc::new(load_blacklist(config)?),
            scorer,
            chat,
            nli,
            search,
            limiter: Arc::new(RateLimiter::unlimited()),
        })
    }

    /// Live HTTP backends. Missing credentials give backends that fail on use.
    pub fn live(config: &PipelineConfig) -> Result<Self, BuildError> {
        let http = |url: &str, token: Option<String>| -> Arc<dyn JsonTransport> {
            let mut c = HttpConfig::new(url);
            c.timeout = config.http_timeout();
            c.max_in_flight = config.max_in_flight;
            c.bearer_token = token;
            Arc::new(HttpTransport::new(c))
        };
        let linker = |url: &Option<String>| -> Arc<dyn EntityLinker> {
            match url {
                Some(u) => Arc::new(HttpLinker::new(http(u, None), "")),
                None => Arc::new(NullLinker),
            }
        };
        if config.endpoints.linker.is_none() {
            tracing::warn!("no linker_url configured; the KG stage will find no entities");
        }
        let sparql: Arc<dyn SparqlEndpoint> = Arc::new(HttpSparqlEndpoint::new(
            config.endpoints.sparql.clone(),
            config.http_timeout(),
            config.max_in_flight,
        ));
        let scorer: Arc<dyn RelevanceScorer> = match &config.endpoints.scorer {
            Some(u) => Arc::new(RemoteCrossEncoder::new(http(u, None)).with_lexical_fallback(config.lexical_fallback)),
            None => Arc::new(LexicalScorer),
        };
        let chat: Arc<dyn ChatBackend> = match &config.secrets.chat_api_key {
            Some(key) => Arc::new(OpenAiChat::new(
                http(&config.endpoints.chat_base, Some(key.clone())),
                config.endpoints.chat_model.clone(),
            )),
            None => Arc::new(Unconfigured("CHAT_API_KEY is not set".into())),
        };
        let search: Arc<dyn SearchEngine> = match (&config.secrets.search_api_key, &config.secrets.search_engine_id) {
            (Some(key), Some(cx)) => {
                let mut s = ProgrammableSearch::new(key.clone(), cx.clone(), config.http_timeout());
                if let Some(url) = &config.endpoints.search {
                    s = s.with_endpoint(url.clone());
                }
                Arc::new(s)
            }
            _ => Arc::new(Unconfigured("SEARCH_API_KEY and SEARCH_ENGINE_ID must both be set".into())),
        };
        let nli = config
            .endpoints
            .nli
            .as_ref()
            .map(|u| Arc::new(RemoteNli::new(http(u, None))) as Arc<dyn NliBackend>);

        Ok(Self {
            linking: Arc::new(EntityLinking::new(
                linker(&config.endpoints.linker),
                linker(&config.endpoints.linker_fallback),
                Arc::new(SparqlSameAs::new(sparql.clone())),
            )),
            sparql,
            blacklist: Arc::new(load_blacklist(config)?),
            scorer,
            chat,
            nli,
            search,
            limiter: Arc::new(RateLimiter::new(config.search_rate)),
        })
    }

    /// Fixture backends when `fixture_dir` is set, live ones otherwise.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, BuildError> {
        match &config.fixture_dir {
            Some(dir) => Self::from_fixture_dir(dir, config),
            None => Self::live(config),
        }
    }
}

/// What Stage 1 produced when it got as far as classification.
struct KgOutcome {
    verdict: Verdict,
    evidence: Vec<EvidenceItem>,
}

pub struct Pipeline {
    backends: Backends,
    config: PipelineConfig,
    counters: Arc<StageCounters>,
}

impl Pipeline {
    pub fn new(backends: Backends, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let p = Self {
            backends,
            config,
            counters: Arc::new(StageCounters::default()),
        };
        p.classifier(p.config.kg_classifier)?;
        p.classifier(p.config.web_classifier)?;
        Ok(p)
    }

    pub fn from_config(config: PipelineConfig) -> Result<Self, BuildError> {
        let backends = Backends::from_config(&config)?;
        Self::new(backends, config).map_err(|e| match e {
            PipelineError::Config(c) => BuildError::Config(c),
            other => BuildError::Config(ConfigError::Missing(other.to_string())),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    fn classifier(&self, kind: ClassifierKind) -> Result<VerdictClassifier, PipelineError> {
        Ok(match kind {
            ClassifierKind::Llm => VerdictClassifier::Llm(LlmClassifier::new(self.backends.chat.clone())),
            ClassifierKind::Nli => {
                let backend = self.backends.nli.clone().ok_or_else(|| {
                    ConfigError::Missing("the nli classifier needs nli_url (or nli.json in fixture mode)".into())
                })?;
                VerdictClassifier::Nli(NliClassifier::new(backend))
            }
        })
    }

    pub async fn verify_claim(&self, claim: &Claim) -> Result<VerificationResult, PipelineError> {
        self.verify_claim_with(claim, &self.config).await
    }

    /// Verifies one claim under `config`, which may differ from the pipeline's
    /// own config in its tunables (k, n_max, stages, classifiers, budget).
    pub async fn verify_claim_with(
        &self,
        claim: &Claim,
        config: &PipelineConfig,
    ) -> Result<VerificationResult, PipelineError> {
        config.validate()?;
        self.counters.claims.fetch_add(1, Ordering::SeqCst);
        let budget = config.budget();
        let out = match tokio::time::timeout(budget, self.run(claim, config)).await {
            Ok(r) => r,
            Err(_) => Err(PipelineError::BudgetExceeded {
                claim_id: claim.id.clone(),
                budget_ms: config.budget_ms,
            }),
        };
        if out.is_err() {
            self.counters.failures.fetch_add(1, Ordering::SeqCst);
        }
        out
    }

    async fn run(&self, claim: &Claim, config: &PipelineConfig) -> Result<VerificationResult, PipelineError> {
        let mut diag = Diagnostics::default();
        let mut latency = StageLatency::default();

        let kg = if config.stages == StageMode::WebOnly {
            None
        } else {
            let started = Instant::now();
            let outcome = self.kg_stage(claim, config, &mut diag).await?;
            latency.kg = Some(started.elapsed().as_millis() as u64);
            outcome
        };

        if let Some(kg) = &kg {
            if kg.verdict.label.is_decisive() {
                return Ok(VerificationResult {
                    claim_id: claim.id.clone(),
                    final_label: kg.verdict.label,
                    stage: Stage::Kg,
                    evidence: kg.evidence.clone(),
                    verdict: kg.verdict.clone(),
                    fallback_used: false,
                    latency_ms: latency,
                    diagnostics: diag,
                });
            }
        }

        if config.stages == StageMode::KgOnly {
            let (stage, evidence, verdict) = match kg {
                Some(k) => (Stage::Kg, k.evidence, k.verdict),
                None => (
                    Stage::None,
                    Vec::new(),
                    Verdict::nei("No knowledge-graph evidence was available."),
                ),
            };
            return Ok(VerificationResult {
                claim_id: claim.id.clone(),
                final_label: verdict.label,
                stage,
                evidence,
                verdict,
                fallback_used: false,
                latency_ms: latency,
                diagnostics: diag,
            });
        }

        if let Some(k) = kg {
            diag.kg_verdict = Some(k.verdict);
            diag.kg_evidence = k.evidence;
        }

        let started = Instant::now();
        let outcome = self.web_stage(claim, config).await;
        latency.web = Some(started.elapsed().as_millis() as u64);
        match outcome {
            Ok(web) => {
                diag.web_queries = web.queries.iter().map(|q| q.as_str().to_string()).collect();
                Ok(VerificationResult {
                    claim_id: claim.id.clone(),
                    final_label: web.verdict.label,
                    stage: Stage::Web,
                    evidence: web.evidence,
                    verdict: web.verdict,
                    fallback_used: true,
                    latency_ms: latency,
                    diagnostics: diag,
                })
            }
            Err(error) => Err(PipelineError::Web {
                error,
                diagnostics: Box::new(diag),
            }),
        }
    }

    /// Link, retrieve, filter, rank, classify. Backend failures are recorded
    /// in `diag` and reported as "no outcome" so Stage 2 can still run.
    async fn kg_stage(
        &self,
        claim: &Claim,
        config: &PipelineConfig,
        diag: &mut Diagnostics,
    ) -> Result<Option<KgOutcome>, PipelineError> {
        let entities = match self.backends.linking.link_entities(claim).await {
            Ok(e) => e,
            Err(e) => {
                diag.notes.push(format!("kg stage: entity linking failed: {e}"));
                return Ok(None);
            }
        };
        diag.entities = entities.iter().map(|e| e.qid.as_str().to_string()).collect();
        let iris: Vec<&str> = entities.iter().filter_map(|e| e.dbpedia_iri.as_deref()).collect();
        if iris.is_empty() {
            diag.notes.push("kg stage: no linked entity has a DBpedia resource".into());
            return Ok(None);
        }

        let retriever = KgRetriever::new(self.backends.sparql.clone()).with_cap(config.triple_cap);
        let fetched = futures::future::join_all(iris.iter().map(|iri| retriever.retrieve_one_hop(iri))).await;
        let mut triples = Vec::new();
        let mut failures = 0;
        for (iri, r) in iris.iter().zip(fetched) {
            match r {
                Ok(t) => triples.extend(t),
                Err(e) => {
                    failures += 1;
                    diag.notes.push(format!("kg stage: retrieval for {iri} failed: {e}"));
                }
            }
        }
        if failures == iris.len() {
            return Ok(None);
        }

        let triples = filter_meta_predicates(triples, &self.backends.blacklist);
        let candidates: Vec<EvidenceItem> = triples
            .iter()
            .map(|t| EvidenceItem::from_triple(t, verbalize_triple(t)))
            .collect();
        if candidates.is_empty() {
            diag.notes.push("kg stage: no triples left after filtering".into());
            return Ok(None);
        }

        let ranker = EvidenceRanker::new(self.backends.scorer.clone(), config.k)
            .map_err(|e| ConfigError::Missing(e.to_string()))?;
        let evidence = match ranker.rank(&claim.text, candidates).await {
            Ok(e) => e,
            Err(e) => {
                diag.notes.push(format!("kg stage: ranking failed: {e}"));
                return Ok(None);
            }
        };

        let classifier = self.classifier(config.kg_classifier)?;
        self.counters.kg_classifications.fetch_add(1, Ordering::SeqCst);
        match classifier.classify(claim, &evidence, PromptStage::Kg).await {
            Ok(verdict) => Ok(Some(KgOutcome { verdict, evidence })),
            Err(e) => {
                diag.notes.push(format!("kg stage: classification failed: {e}"));
                diag.kg_evidence = evidence;
                Ok(None)
            }
        }
    }

    async fn web_stage(&self, claim: &Claim, config: &PipelineConfig) -> Result<WebOutcome, WebError> {
        self.counters.web_runs.fetch_add(1, Ordering::SeqCst);
        let ranker = EvidenceRanker::new(self.backends.scorer.clone(), config.k).map_err(WebError::Ranking)?;
        let classifier = self.classifier(config.web_classifier).map_err(|e| {
            WebError::Classify(ClassifyError::NliBackendUnavailable(e.to_string()))
        })?;
        let fallback = WebFallback {
            chat: self.backends.chat.clone(),
            engine: self.backends.search.clone(),
            ranker: Arc::new(ranker),
            classifier: Arc::new(classifier),
            limiter: self.backends.limiter.clone(),
            n_max: config.n_max,
        };
        fallback.run(claim).await
    }
}

/// True when a result satisfies the record-level pipeline invariants.
pub fn result_is_consistent(r: &VerificationResult, k: usize) -> bool {
    let fallback_matches = r.fallback_used == (r.stage == Stage::Web);
    let evidence_ok = !r.final_label.is_decisive() || !r.evidence.is_empty();
    let label_matches = r.final_label == r.verdict.label;
    let cited_ok = r.verdict.cited_evidence.iter().all(|&i| i < r.evidence.len());
    let none_is_nei = r.stage != Stage::None || r.final_label == Label::Nei;
    fallback_matches
        && evidence_ok
        && label_matches
        && cited_ok
        && none_is_nei
        && r.evidence.len() <= k
        && r.verdict.is_well_formed()
}
