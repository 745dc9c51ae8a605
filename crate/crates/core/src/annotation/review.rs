//! Automated sufficiency review of a worksheet by a chat model.
//!
//! The prompt below was written for this tool. It is not one of the
//! pipeline's classification prompts and has no external source.

use serde_json::Value;

use super::{AnnotationRow, Sufficiency};
use crate::classify::chat::{ask_json, extract_json_object, ChatBackend, ChatRequest};
use crate::classify::ClassifyError;

pub const REVIEW_SYSTEM: &str = "You audit the output of an automated fact-checking system. \
You see a claim, the label the system assigned, and the evidence it retrieved. \
Decide whether a careful reader could reach the assigned label from this evidence alone, without outside knowledge. \
Answer \"sufficient\" if so and \"not sufficient\" otherwise. \
Reply with JSON only: {\"judgment\": \"sufficient\" | \"not sufficient\", \"reason\": \"<one sentence>\"}.";

pub const REVIEW_USER: &str = "Claim: <CLAIM>\nAssigned label: <LABEL>\n\nEvidence:\n<EVIDENCE>";

pub fn review_request(row: &AnnotationRow) -> ChatRequest {
    let user = REVIEW_USER
        .replace("<EVIDENCE>", &row.found_evidence)
        .replace("<LABEL>", row.predicted_label.as_str())
        .replace("<CLAIM>", &row.claim);
    ChatRequest {
        system_text: REVIEW_SYSTEM.to_string(),
        user_text: user,
        temperature: 0.0,
    }
}

pub fn parse_review(raw: &str) -> Result<(Sufficiency, String), String> {
    let obj = extract_json_object(raw).ok_or_else(|| "no JSON object in model output".to_string())?;
    let judgment = obj
        .get("judgment")
        .and_then(Value::as_str)
        .and_then(Sufficiency::parse)
        .ok_or_else(|| "missing or unknown \"judgment\"".to_string())?;
    let reason = obj.get("reason").and_then(Value::as_str).unwrap_or_default().trim().to_string();
    Ok((judgment, reason))
}

/// Returns a copy of the worksheet with `human_annotated` filled by the
/// model and its reason in `notes`. Rows are reviewed one at a time.
pub async fn review_rows(chat: &dyn ChatBackend, rows: &[AnnotationRow]) -> Result<Vec<AnnotationRow>, ClassifyError> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let (judgment, reason) = ask_json(chat, &review_request(row), parse_review).await?;
        let mut reviewed = row.clone();
        reviewed.human_annotated = Some(judgment);
        reviewed.notes = reason;
        out.push(reviewed);
    }
    Ok(out)
}
