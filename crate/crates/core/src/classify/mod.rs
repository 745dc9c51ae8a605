//! Verdict classification: chat-model JSON protocol or pairwise NLI.

pub mod chat;
pub mod llm;
pub mod nli;
pub mod prompts;

use serde::{Deserialize, Serialize};

use crate::domain::{Claim, EvidenceItem, Verdict};
pub use chat::{ChatBackend, ChatRequest, ChatRule, FixtureChat, OpenAiChat};
pub use llm::LlmClassifier;
pub use nli::{NliBackend, NliClassifier, NliLogits, RemoteNli};
pub use prompts::{PromptStage, PromptTemplate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifyError {
    #[error("malformed model output: {0}")]
    MalformedModelOutput(String),
    #[error("chat backend unavailable: {0}")]
    ChatBackendUnavailable(String),
    #[error("NLI backend unavailable: {0}")]
    NliBackendUnavailable(String),
    #[error("no evidence to classify")]
    NoEvidence,
    #[error("claim text is empty")]
    EmptyClaim,
    #[error("prompt stage {0:?} does not classify evidence")]
    WrongStage(PromptStage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Llm,
    Nli,
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "llm" => Ok(Self::Llm),
            "nli" | "deberta" => Ok(Self::Nli),
            other => Err(format!("unknown classifier {other:?} (expected llm or nli)")),
        }
    }
}

/// The evidence classifier used by one pipeline stage.
pub enum VerdictClassifier {
    Llm(LlmClassifier),
    Nli(NliClassifier),
}

impl VerdictClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            VerdictClassifier::Llm(_) => ClassifierKind::Llm,
            VerdictClassifier::Nli(_) => ClassifierKind::Nli,
        }
    }

    /// `stage` selects the prompt for the chat path and is ignored by NLI.
    pub async fn classify(
        &self,
        claim: &Claim,
        evidence: &[EvidenceItem],
        stage: PromptStage,
    ) -> Result<Verdict, ClassifyError> {
        match self {
            VerdictClassifier::Llm(c) => c.classify(claim, evidence, stage).await,
            VerdictClassifier::Nli(c) => c.classify(claim, evidence).await,
        }
    }
}
