//! NEI re-annotation worksheets and agreement statistics.

pub mod agreement;
pub mod review;

use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{parse_label, Claim, EvidenceKind, EvidenceSource, Label, VerificationResult};
use crate::eval::Shortfall;

pub use agreement::{
    cohen_kappa, fleiss_kappa, sufficiency_stats, AgreementError, AgreementMatrix, AgreementReport, Kappa,
};

pub const DEFAULT_EXPORT_SIZE: usize = 150;

pub const HEADER: [&str; 8] = [
    "nr",
    "claim",
    "true_label",
    "predicted_label",
    "found_evidence",
    "llm_explanation",
    "human_annotated",
    "notes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sufficiency {
    #[serde(rename = "sufficient")]
    Sufficient,
    #[serde(rename = "not sufficient")]
    NotSufficient,
}

impl Sufficiency {
    pub const ALL: [Sufficiency; 2] = [Sufficiency::Sufficient, Sufficiency::NotSufficient];

    pub fn as_str(self) -> &'static str {
        match self {
            Sufficiency::Sufficient => "sufficient",
            Sufficiency::NotSufficient => "not sufficient",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        let norm = raw.trim().to_lowercase().replace(['_', '-'], " ");
        match norm.split_whitespace().collect::<Vec<_>>().join(" ").as_str() {
            "sufficient" => Some(Sufficiency::Sufficient),
            "not sufficient" | "insufficient" => Some(Sufficiency::NotSufficient),
            _ => None,
        }
    }
}

impl fmt::Display for Sufficiency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One worksheet row, in column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRow {
    pub nr: usize,
    pub claim: String,
    pub true_label: Label,
    pub predicted_label: Label,
    pub found_evidence: String,
    pub llm_explanation: String,
    pub human_annotated: Option<Sufficiency>,
    pub notes: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header must be {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Renders selected evidence as a numbered list headed by its source type.
pub fn format_evidence(result: &VerificationResult) -> String {
    let Some(first) = result.evidence.first() else {
        return String::new();
    };
    let heading = match first.kind {
        EvidenceKind::KgTriple => "DBpedia paths:",
        EvidenceKind::WebSnippet => "Web snippets:",
    };
    let mut out = String::from(heading);
    for (i, e) in result.evidence.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, e.text));
        if let EvidenceSource::Web { url, .. } = &e.source {
            out.push_str(&format!(" <{url}>"));
        }
    }
    out
}

pub fn write_csv(rows: &[AnnotationRow]) -> Result<String, CsvError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.nr.to_string().as_str(),
            &r.claim,
            r.true_label.fever_str(),
            r.predicted_label.as_str(),
            &r.found_evidence,
            &r.llm_explanation,
            r.human_annotated.map(Sufficiency::as_str).unwrap_or(""),
            &r.notes,
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CsvError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv writer only emits the UTF-8 it was given"))
}

pub fn read_csv(text: &str) -> Result<Vec<AnnotationRow>, CsvError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != HEADER {
        return Err(CsvError::Header {
            expected: HEADER.join(","),
            found: header.join(","),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |message: String| CsvError::Row { row, message };
        let field = |j: usize| rec.get(j).unwrap_or("").to_string();
        let label = |j: usize| parse_label(&field(j)).map_err(|e| bad(e.to_string()));
        let annotated = field(6);
        let human_annotated = if annotated.trim().is_empty() {
            None
        } else {
            Some(Sufficiency::parse(&annotated).ok_or_else(|| bad(format!("unknown judgment {annotated:?}")))?)
        };
        rows.push(AnnotationRow {
            nr: field(0).trim().parse().map_err(|e| bad(format!("nr: {e}")))?,
            claim: field(1),
            true_label: label(2)?,
            predicted_label: label(3)?,
            found_evidence: field(4),
            llm_explanation: field(5),
            human_annotated,
            notes: field(7),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeiExport {
    pub rows: Vec<AnnotationRow>,
    pub csv: String,
    /// Set when fewer than the requested number of claims qualified.
    pub shortfall: Option<Shortfall>,
}

/// Samples gold-NEI claims the pipeline labeled Supported or Refuted and
/// renders them as a blank worksheet. Pairs are matched by position.
pub fn export_nei_csv(
    claims: &[Claim],
    results: &[VerificationResult],
    n: usize,
    seed: u64,
) -> Result<NeiExport, CsvError> {
    let mut pool: Vec<(&Claim, &VerificationResult)> = claims
        .iter()
        .zip(results)
        .filter(|(c, r)| c.gold_label == Some(Label::Nei) && r.final_label.is_decisive() && !r.evidence.is_empty())
        .collect();
    pool.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let (picked, shortfall) = if pool.len() <= n {
        let shortfall = (pool.len() < n).then(|| {
            tracing::warn!(requested = n, available = pool.len(), "insufficient NEI pool; exporting all");
            Shortfall {
                requested: n,
                available: pool.len(),
            }
        });
        (pool, shortfall)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, pool.len(), n).into_vec();
        idx.sort_unstable();
        (idx.into_iter().map(|i| pool[i]).collect(), None)
    };

    let rows: Vec<AnnotationRow> = picked
        .into_iter()
        .enumerate()
        .map(|(i, (c, r))| AnnotationRow {
            nr: i + 1,
            claim: c.text.clone(),
            true_label: Label::Nei,
            predicted_label: r.final_label,
            found_evidence: format_evidence(r),
            llm_explanation: if r.final_label == Label::Nei {
                String::new()
            } else {
                r.verdict.reason.clone()
            },
            human_annotated: None,
            notes: String::new(),
        })
        .collect();
    let csv = write_csv(&rows)?;
    Ok(NeiExport { rows, csv, shortfall })
}
