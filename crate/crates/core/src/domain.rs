//! Value types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Verification label. Serialized with the prompt spellings
/// (`"Supported"`, `"Refuted"`, `"Not Enough Info"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Supported,
    Refuted,
    Nei,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl Label {
    pub const ALL: [Label; 3] = [Label::Supported, Label::Refuted, Label::Nei];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supported => "Supported",
            Label::Refuted => "Refuted",
            Label::Nei => "Not Enough Info",
        }
    }

    /// FEVER dataset spelling.
    pub fn fever_str(self) -> &'static str {
        match self {
            Label::Supported => "SUPPORTS",
            Label::Refuted => "REFUTES",
            Label::Nei => "NOT ENOUGH INFO",
        }
    }

    pub fn is_decisive(self) -> bool {
        self != Label::Nei
    }
}

/// Parses any accepted spelling of a label, case-insensitively.
pub fn parse_label(raw: &str) -> Result<Label, UnknownLabel> {
    let norm: String = raw
        .trim()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase();
    match norm.as_str() {
        "supported" | "supports" | "support" => Ok(Label::Supported),
        "refuted" | "refutes" | "refute" => Ok(Label::Refuted),
        "not enough info" | "not enough information" | "nei" => Ok(Label::Nei),
        _ => Err(UnknownLabel(raw.to_string())),
    }
}

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_label(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClaimError {
    #[error("claim text is empty")]
    EmptyText,
}

/// A natural-language statement to verify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<Label>,
}

impl Claim {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ClaimError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ClaimError::EmptyText);
        }
        Ok(Self {
            id: id.into(),
            text: text.trim().to_string(),
            gold_label: None,
        })
    }

    pub fn with_gold(mut self, label: Label) -> Self {
        self.gold_label = Some(label);
        self
    }
}

/// Which side of a triple the looked-up entity occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    EntityAsSubject,
    EntityAsObject,
}

/// An RDF term in object position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term {
    Iri {
        value: String,
    },
    Literal {
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        datatype: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lang: Option<String>,
    },
}

impl Term {
    pub fn iri(value: impl Into<String>) -> Self {
        Term::Iri {
            value: value.into(),
        }
    }

    pub fn literal(value: impl Into<String>) -> Self {
        Term::Literal {
            value: value.into(),
            datatype: None,
            lang: None,
        }
    }

    pub fn lang_literal(value: impl Into<String>, lang: impl Into<String>) -> Self {
        Term::Literal {
            value: value.into(),
            datatype: None,
            lang: Some(lang.into()),
        }
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri { value } => Some(value),
            Term::Literal { .. } => None,
        }
    }

    pub fn lang(&self) -> Option<&str> {
        match self {
            Term::Literal { lang, .. } => lang.as_deref(),
            Term::Iri { .. } => None,
        }
    }
}

/// Returns true for strings shaped like an absolute IRI (`scheme:rest`).
pub fn is_valid_iri(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    let scheme_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    scheme_ok
        && !rest.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '<' | '>' | '"' | '{' | '}' | '`'))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TripleError {
    #[error("invalid subject IRI {0:?}")]
    Subject(String),
    #[error("invalid predicate IRI {0:?}")]
    Predicate(String),
    #[error("invalid object IRI {0:?}")]
    Object(String),
}

/// One RDF fact adjacent to a linked entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Term,
    pub direction: Direction,
}

impl Triple {
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: Term,
        direction: Direction,
    ) -> Result<Self, TripleError> {
        let subject = subject.into();
        let predicate = predicate.into();
        if !is_valid_iri(&subject) {
            return Err(TripleError::Subject(subject));
        }
        if !is_valid_iri(&predicate) {
            return Err(TripleError::Predicate(predicate));
        }
        if let Term::Iri { value } = &object {
            if !is_valid_iri(value) {
                return Err(TripleError::Object(value.clone()));
            }
        }
        Ok(Self {
            subject,
            predicate,
            object,
            direction,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    KgTriple,
    WebSnippet,
}

/// Where a piece of evidence came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvidenceSource {
    Triple {
        subject: String,
        predicate: String,
        object: Term,
    },
    Web {
        url: String,
        #[serde(default)]
        title: String,
    },
}

/// A scored piece of evidence, either a verbalized triple or a web snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub text: String,
    pub kind: EvidenceKind,
    pub source: EvidenceSource,
    pub score: f64,
}

impl EvidenceItem {
    pub fn from_triple(triple: &Triple, text: String) -> Self {
        Self {
            text,
            kind: EvidenceKind::KgTriple,
            source: EvidenceSource::Triple {
                subject: triple.subject.clone(),
                predicate: triple.predicate.clone(),
                object: triple.object.clone(),
            },
            score: 0.0,
        }
    }

    pub fn from_snippet(text: impl Into<String>, url: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            kind: EvidenceKind::WebSnippet,
            source: EvidenceSource::Web {
                url: url.into(),
                title: title.into(),
            },
            score: 0.0,
        }
    }

    /// `kind` agrees with the shape of `source` and the score is finite.
    pub fn is_consistent(&self) -> bool {
        let shape_ok = matches!(
            (self.kind, &self.source),
            (EvidenceKind::KgTriple, EvidenceSource::Triple { .. })
                | (EvidenceKind::WebSnippet, EvidenceSource::Web { .. })
        );
        shape_ok && self.score.is_finite()
    }
}

/// A classifier decision over a claim and its evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub reason: String,
    /// Zero-based indices into the evidence list the verdict was made from.
    pub cited_evidence: Vec<usize>,
}

impl Verdict {
    pub fn nei(reason: impl Into<String>) -> Self {
        Self {
            label: Label::Nei,
            reason: reason.into(),
            cited_evidence: Vec::new(),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.label == Label::Nei || !self.reason.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Kg,
    Web,
    None,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLatency {
    pub kg: Option<u64>,
    pub web: Option<u64>,
}

/// Side information kept for inspection; never used to make decisions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Q-IDs linked in the claim.
    pub entities: Vec<String>,
    pub kg_verdict: Option<Verdict>,
    pub kg_evidence: Vec<EvidenceItem>,
    pub web_queries: Vec<String>,
    pub notes: Vec<String>,
}

/// Final output of one claim verification. This is also the REST response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub claim_id: String,
    pub final_label: Label,
    pub stage: Stage,
    pub evidence: Vec<EvidenceItem>,
    pub verdict: Verdict,
    pub fallback_used: bool,
    pub latency_ms: StageLatency,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}
