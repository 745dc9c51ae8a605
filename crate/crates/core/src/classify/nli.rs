//! Three-way NLI judging of (evidence, claim) pairs.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ClassifyError;
use crate::domain::{Claim, EvidenceItem, Label, Verdict};
use crate::transport::JsonTransport;

/// Raw logits in (entailment, neutral, contradiction) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliLogits {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

impl NliLogits {
    pub fn new(entail: f64, neutral: f64, contradict: f64) -> Self {
        Self {
            entail,
            neutral,
            contradict,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.entail, self.neutral, self.contradict]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NliClass {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliClass {
    const ORDER: [NliClass; 3] = [NliClass::Entailment, NliClass::Neutral, NliClass::Contradiction];
}

pub fn map_nli_label(class: NliClass) -> Label {
    match class {
        NliClass::Entailment => Label::Supported,
        NliClass::Neutral => Label::Nei,
        NliClass::Contradiction => Label::Refuted,
    }
}

/// Max-subtracted softmax over the three logits.
pub fn softmax(logits: &NliLogits) -> [f64; 3] {
    let x = logits.as_array();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = x.map(|v| (v - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliJudgment {
    pub probs: [f64; 3],
    pub class: NliClass,
    pub label: Label,
    pub p_max: f64,
}

impl NliJudgment {
    /// Argmax over the softmax; on exact ties the earlier class wins.
    pub fn from_logits(logits: &NliLogits) -> Self {
        let probs = softmax(logits);
        let mut best = 0;
        for i in 1..3 {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        let class = NliClass::ORDER[best];
        Self {
            probs,
            class,
            label: map_nli_label(class),
            p_max: probs[best],
        }
    }
}

/// Picks the verdict from independent pair judgments: the non-neutral
/// judgment with the highest `p_max` wins, ties going to Refuted and then to
/// the lower index. No decisive judgment means NEI.
pub fn aggregate(judgments: &[NliJudgment]) -> Verdict {
    let mut best: Option<(usize, &NliJudgment)> = None;
    for (i, j) in judgments.iter().enumerate() {
        if j.label == Label::Nei {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                j.p_max > b.p_max
                    || (j.p_max == b.p_max && j.label == Label::Refuted && b.label != Label::Refuted)
            }
        };
        if better {
            best = Some((i, j));
        }
    }
    match best {
        Some((i, j)) => {
            let verb = if j.label == Label::Supported {
                "entails"
            } else {
                "contradicts"
            };
            Verdict {
                label: j.label,
                reason: format!("Evidence {} {verb} the claim (p={:.3}).", i + 1, j.p_max),
                cited_evidence: vec![i],
            }
        }
        None => Verdict::nei("No evidence item entails or contradicts the claim."),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
}

#[async_trait]
pub trait NliBackend: Send + Sync {
    async fn logits(&self, pairs: &[NliPair]) -> Result<Vec<NliLogits>, ClassifyError>;
}

#[derive(Deserialize)]
struct NliResponse {
    logits: Vec<Vec<f64>>,
}

/// NLI model served over HTTP: `{"pairs": [...]}` -> `{"logits": [[e, n, c]]}`.
pub struct RemoteNli {
    transport: Arc<dyn JsonTransport>,
    batch_size: usize,
}

impl RemoteNli {
    pub fn new(transport: Arc<dyn JsonTransport>) -> Self {
        Self {
            transport,
            batch_size: 64,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    async fn batch(&self, pairs: &[NliPair]) -> Result<Vec<NliLogits>, ClassifyError> {
        let unavailable = |m: String| ClassifyError::NliBackendUnavailable(m);
        let resp = self
            .transport
            .post_json("nli", &json!({ "pairs": pairs }))
            .await
            .map_err(|e| unavailable(e.to_string()))?;
        let parsed: NliResponse =
            serde_json::from_value(resp).map_err(|e| unavailable(format!("bad response: {e}")))?;
        if parsed.logits.len() != pairs.len() {
            return Err(unavailable(format!(
                "expected {} logit rows, got {}",
                pairs.len(),
                parsed.logits.len()
            )));
        }
        parsed
            .logits
            .into_iter()
            .map(|row| match row[..] {
                [e, n, c] if e.is_finite() && n.is_finite() && c.is_finite() => Ok(NliLogits::new(e, n, c)),
                _ => Err(unavailable(format!("bad logit row {row:?}"))),
            })
            .collect()
    }
}

#[async_trait]
impl NliBackend for RemoteNli {
    async fn logits(&self, pairs: &[NliPair]) -> Result<Vec<NliLogits>, ClassifyError> {
        let chunks = pairs.chunks(self.batch_size).map(|c| self.batch(c));
        let results = futures::future::try_join_all(chunks).await?;
        Ok(results.into_iter().flatten().collect())
    }
}

pub struct NliClassifier {
    backend: Arc<dyn NliBackend>,
}

impl NliClassifier {
    pub fn new(backend: Arc<dyn NliBackend>) -> Self {
        Self { backend }
    }

    /// Judges each (evidence, claim) pair independently, then aggregates.
    pub async fn classify(&self, claim: &Claim, evidence: &[EvidenceItem]) -> Result<Verdict, ClassifyError> {
        if evidence.is_empty() {
            return Err(ClassifyError::NoEvidence);
        }
        let pairs: Vec<NliPair> = evidence
            .iter()
            .map(|e| NliPair {
                premise: e.text.clone(),
                hypothesis: claim.text.clone(),
            })
            .collect();
        let logits = self.backend.logits(&pairs).await?;
        let judgments: Vec<NliJudgment> = logits.iter().map(NliJudgment::from_logits).collect();
        Ok(aggregate(&judgments))
    }
}
