//! Chat-model classification over a numbered evidence list.

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde_json::Value;

use super::chat::{ask_json, extract_json_object, ChatBackend, ChatRequest};
use super::prompts::{PromptStage, PromptTemplate};
use super::ClassifyError;
use crate::domain::{parse_label, Claim, EvidenceItem, Label, Verdict};

static CITATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:paths?|snippets?|evidence)\s*#?\s*(\d+(?:\s*(?:,|and|&|/|-|–)\s*\d+)*)")
        .expect("static regex")
});

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("static regex"));

/// Zero-based evidence indices mentioned as "Path 1", "Snippets 2 and 3", ...
pub fn cited_indices(reason: &str, evidence_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for cap in CITATION.captures_iter(reason) {
        for n in NUMBER.find_iter(&cap[1]) {
            if let Ok(n) = n.as_str().parse::<usize>() {
                if (1..=evidence_len).contains(&n) && !out.contains(&(n - 1)) {
                    out.push(n - 1);
                }
            }
        }
    }
    out
}

/// Labels each prompt stage is allowed to produce.
pub fn permitted_labels(stage: PromptStage) -> &'static [Label] {
    match stage {
        PromptStage::Kg => &[Label::Supported, Label::Refuted, Label::Nei],
        PromptStage::Web | PromptStage::ZeroShot => &[Label::Supported, Label::Refuted],
        PromptStage::Rewrite => &[],
    }
}

/// Parses `{"label": ..., "reason": ...}` and checks the label is allowed.
pub fn parse_verdict_json(raw: &str, permitted: &[Label]) -> Result<(Label, String), String> {
    let obj = extract_json_object(raw).ok_or_else(|| "no JSON object in model output".to_string())?;
    let label_raw = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| "missing string field \"label\"".to_string())?;
    let label = parse_label(label_raw).map_err(|e| e.to_string())?;
    if !permitted.contains(&label) {
        return Err(format!("label {label} is not permitted here"));
    }
    let reason = obj
        .get("reason")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .trim()
        .to_string();
    if label != Label::Nei && reason.is_empty() {
        return Err("decisive label without a reason".into());
    }
    Ok((label, reason))
}

pub struct LlmClassifier {
    chat: Arc<dyn ChatBackend>,
    temperature: f64,
}

impl LlmClassifier {
    pub fn new(chat: Arc<dyn ChatBackend>) -> Self {
        Self { chat, temperature: 0.0 }
    }

    pub fn chat(&self) -> &Arc<dyn ChatBackend> {
        &self.chat
    }

    pub fn request(&self, stage: PromptStage, claim: &str, evidence: &[String]) -> ChatRequest {
        let rendered = PromptTemplate::for_stage(stage).render(claim, evidence);
        ChatRequest {
            system_text: rendered.system,
            user_text: rendered.user,
            temperature: self.temperature,
        }
    }

    /// Classifies with the KG or web prompt; the whole evidence list goes
    /// into one prompt.
    pub async fn classify(
        &self,
        claim: &Claim,
        evidence: &[EvidenceItem],
        stage: PromptStage,
    ) -> Result<Verdict, ClassifyError> {
        if !matches!(stage, PromptStage::Kg | PromptStage::Web) {
            return Err(ClassifyError::WrongStage(stage));
        }
        if evidence.is_empty() {
            return Err(ClassifyError::NoEvidence);
        }
        let texts: Vec<String> = evidence.iter().map(|e| e.text.clone()).collect();
        let request = self.request(stage, &claim.text, &texts);
        let permitted = permitted_labels(stage);
        let (label, reason) = ask_json(self.chat.as_ref(), &request, |raw| parse_verdict_json(raw, permitted)).await?;
        let cited_evidence = cited_indices(&reason, evidence.len());
        Ok(Verdict {
            label,
            reason,
            cited_evidence,
        })
    }

    /// Claim-only baseline; never used by the pipeline itself.
    pub async fn classify_zero_shot(&self, claim: &Claim) -> Result<Verdict, ClassifyError> {
        if claim.text.trim().is_empty() {
            return Err(ClassifyError::EmptyClaim);
        }
        let request = self.request(PromptStage::ZeroShot, &claim.text, &[]);
        let permitted = permitted_labels(PromptStage::ZeroShot);
        let (label, reason) = ask_json(self.chat.as_ref(), &request, |raw| parse_verdict_json(raw, permitted)).await?;
        Ok(Verdict {
            label,
            reason,
            cited_evidence: Vec::new(),
        })
    }
}
