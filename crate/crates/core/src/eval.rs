//! Dataset ingestion, subset sampling, batch runs and label metrics.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use futures::StreamExt;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::LlmClassifier;
use crate::domain::{parse_label, Claim, Label, Stage, VerificationResult};
use crate::pipeline::Pipeline;

pub const DEFAULT_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// `{id, claim, label}` with FEVER label spellings.
    #[default]
    Fever,
    /// Same fields as FEVER.
    Fever2,
    /// `{id, claim, label}` where the label is a boolean or a one-element
    /// boolean list; true maps to Supported.
    FactKg,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', '.'], "").as_str() {
            "fever" => Ok(Self::Fever),
            "fever2" | "fever20" => Ok(Self::Fever2),
            "factkg" => Ok(Self::FactKg),
            other => Err(format!("unknown dataset format {other:?} (expected fever, fever2 or factkg)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} malformed line(s): {}", .lines.len(), summarize(.lines))]
    Format { lines: Vec<(usize, String)> },
}

fn summarize(lines: &[(usize, String)]) -> String {
    lines
        .iter()
        .take(10)
        .map(|(n, m)| format!("line {n}: {m}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl LoadError {
    /// 1-based numbers of the offending lines.
    pub fn line_numbers(&self) -> Vec<usize> {
        match self {
            LoadError::Format { lines } => lines.iter().map(|(n, _)| *n).collect(),
            LoadError::Io(_) => Vec::new(),
        }
    }
}

fn label_field(obj: &Value, format: DatasetFormat) -> Result<Label, String> {
    let keys: &[&str] = match format {
        DatasetFormat::FactKg => &["label", "Label"],
        _ => &["label"],
    };
    let raw = keys
        .iter()
        .find_map(|k| obj.get(*k))
        .ok_or_else(|| "missing field \"label\"".to_string())?;
    let as_bool = |v: &Value| v.as_bool().map(|b| if b { Label::Supported } else { Label::Refuted });
    match (format, raw) {
        (DatasetFormat::FactKg, Value::Array(items)) if items.len() == 1 => {
            as_bool(&items[0]).ok_or_else(|| format!("unsupported label {raw}"))
        }
        (DatasetFormat::FactKg, Value::Bool(_)) => Ok(as_bool(raw).expect("bool")),
        (_, Value::String(s)) => parse_label(s).map_err(|e| e.to_string()),
        _ => Err(format!("unsupported label {raw}")),
    }
}

fn parse_line(line: &str, line_no: usize, format: DatasetFormat) -> Result<Claim, String> {
    let obj: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    if !obj.is_object() {
        return Err("not a JSON object".into());
    }
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        None => format!("line-{line_no}"),
        Some(other) => return Err(format!("unsupported id {other}")),
    };
    let text = obj
        .get("claim")
        .and_then(Value::as_str)
        .ok_or_else(|| "missing string field \"claim\"".to_string())?;
    let claim = Claim::new(id, text).map_err(|e| e.to_string())?;
    Ok(claim.with_gold(label_field(&obj, format)?))
}

/// Parses JSONL text. Blank lines are skipped; every bad line is reported.
pub fn parse_jsonl(text: &str, format: DatasetFormat) -> Result<Vec<Claim>, LoadError> {
    let mut claims = Vec::new();
    let mut bad = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, line_no, format) {
            Ok(c) if !ids.insert(c.id.clone()) => bad.push((line_no, format!("duplicate id {:?}", c.id))),
            Ok(c) => claims.push(c),
            Err(m) => bad.push((line_no, m)),
        }
    }
    if bad.is_empty() {
        Ok(claims)
    } else {
        Err(LoadError::Format { lines: bad })
    }
}

pub fn load_jsonl(path: &Path, format: DatasetFormat) -> Result<Vec<Claim>, LoadError> {
    parse_jsonl(&std::fs::read_to_string(path)?, format)
}

pub fn load_fever_jsonl(path: &Path) -> Result<Vec<Claim>, LoadError> {
    load_jsonl(path, DatasetFormat::Fever)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shortfall {
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub claims: Vec<Claim>,
    pub shortfall: Option<Shortfall>,
}

/// Drops NEI-gold claims, sorts by id and draws `n` without replacement.
/// The result is listed in id order and depends only on the claim set and
/// the seed, not on input order.
pub fn sample_sr_subset(claims: &[Claim], n: usize, seed: u64) -> Sample {
    let mut pool: Vec<&Claim> = claims
        .iter()
        .filter(|c| matches!(c.gold_label, Some(Label::Supported | Label::Refuted)))
        .collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    if pool.len() <= n {
        let shortfall = (pool.len() < n).then(|| {
            tracing::warn!(requested = n, available = pool.len(), "sample smaller than requested");
            Shortfall {
                requested: n,
                available: pool.len(),
            }
        });
        return Sample {
            claims: pool.into_iter().cloned().collect(),
            shortfall,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Sample {
        claims: picked.into_iter().map(|i| pool[i].clone()).collect(),
        shortfall: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Sr,
    Srn,
}

impl EvalMode {
    pub fn labels(self) -> &'static [Label] {
        match self {
            EvalMode::Sr => &[Label::Supported, Label::Refuted],
            EvalMode::Srn => &Label::ALL,
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('/', "").as_str() {
            "sr" => Ok(Self::Sr),
            "srn" => Ok(Self::Srn),
            other => Err(format!("unknown mode {other:?} (expected sr or srn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("gold has {gold} labels but predicted has {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("gold label at position {0} is NEI, which sr mode excludes")]
    NeiGoldInSrMode(usize),
    #[error("no labels to score")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this class.
    pub support: usize,
    /// Predictions of this class.
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub n: usize,
    /// Macro averages over the classes present in gold.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub fallback_rate: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class and macro precision/recall/F1 plus accuracy. In sr mode a
/// predicted NEI is simply wrong: a miss for its gold class and a false
/// positive for no class.
pub fn compute_metrics(gold: &[Label], predicted: &[Label], mode: EvalMode) -> Result<MetricsReport, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    if mode == EvalMode::Sr {
        if let Some(i) = gold.iter().position(|&g| g == Label::Nei) {
            return Err(MetricsError::NeiGoldInSrMode(i));
        }
    }
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    let per_class: Vec<ClassMetrics> = mode
        .labels()
        .iter()
        .map(|&c| {
            let tp = gold.iter().zip(predicted).filter(|&(&g, &p)| g == c && p == c).count();
            let support = gold.iter().filter(|&&g| g == c).count();
            let predicted_c = predicted.iter().filter(|&&p| p == c).count();
            let precision = ratio(tp, predicted_c);
            let recall = ratio(tp, support);
            ClassMetrics {
                label: c,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
                predicted: predicted_c,
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64;
    Ok(MetricsReport {
        mode,
        n: gold.len(),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        accuracy: ratio(correct, gold.len()),
        per_class,
        fallback_rate: None,
    })
}

/// Share of results that went through the web stage; 0 for an empty list.
pub fn fallback_rate(results: &[VerificationResult]) -> f64 {
    ratio(results.iter().filter(|r| r.fallback_used).count(), results.len())
}

impl MetricsReport {
    pub fn with_fallback_rate(mut self, rate: f64) -> Self {
        self.fallback_rate = Some(rate);
        self
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            EvalMode::Sr => "S/R",
            EvalMode::Srn => "S/R/N",
        };
        let _ = writeln!(out, "mode {mode}, n = {}", self.n);
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9} {:>8} {:>9}",
            "class", "precision", "recall", "f1", "support", "predicted"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>9}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support,
                c.predicted
            );
        }
        let _ = writeln!(
            out,
            "{:<16} {:>9.4} {:>9.4} {:>9.4}",
            "macro", self.precision, self.recall, self.f1
        );
        let _ = writeln!(out, "{:<16} {:>9.4}", "accuracy", self.accuracy);
        if let Some(f) = self.fallback_rate {
            let _ = writeln!(out, "{:<16} {:>9.4}", "fallback rate", f);
        }
        out
    }
}

/// One scored claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub claim: Claim,
    pub predicted: Label,
    pub stage: Stage,
    pub fallback_used: bool,
    /// Set when the run failed; the claim is then scored as NEI.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub records: Vec<EvalRecord>,
    pub results: Vec<VerificationResult>,
}

impl EvalRun {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    /// Metrics over records that carry a gold label.
    pub fn metrics(&self, mode: EvalMode) -> Result<MetricsReport, MetricsError> {
        let report = metrics_for(&self.records, mode)?;
        Ok(report.with_fallback_rate(ratio(
            self.records.iter().filter(|r| r.fallback_used).count(),
            self.records.len(),
        )))
    }
}

pub fn metrics_for(records: &[EvalRecord], mode: EvalMode) -> Result<MetricsReport, MetricsError> {
    let (gold, predicted): (Vec<Label>, Vec<Label>) = records
        .iter()
        .filter_map(|r| r.claim.gold_label.map(|g| (g, r.predicted)))
        .unzip();
    compute_metrics(&gold, &predicted, mode)
}

/// Runs the pipeline over `claims` with up to `concurrency` claims in
/// flight. Records keep input order.
pub async fn evaluate(pipeline: &Pipeline, claims: &[Claim], concurrency: usize) -> EvalRun {
    let outcomes: Vec<_> = futures::stream::iter(claims)
        .map(|c| async move { (c, pipeline.verify_claim(c).await) })
        .buffered(concurrency.max(1))
        .collect()
        .await;
    let mut records = Vec::with_capacity(outcomes.len());
    let mut results = Vec::new();
    for (claim, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                records.push(EvalRecord {
                    claim: claim.clone(),
                    predicted: r.final_label,
                    stage: r.stage,
                    fallback_used: r.fallback_used,
                    error: None,
                });
                results.push(r);
            }
            Err(e) => {
                tracing::warn!(claim = %claim.id, error = %e, "verification failed");
                records.push(EvalRecord {
                    claim: claim.clone(),
                    predicted: Label::Nei,
                    stage: Stage::None,
                    fallback_used: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    EvalRun { records, results }
}

/// Claim-only chat baseline.
pub async fn zero_shot_baseline(llm: &LlmClassifier, claims: &[Claim], concurrency: usize) -> Vec<EvalRecord> {
    futures::stream::iter(claims)
        .map(|c| async move {
            let (predicted, error) = match llm.classify_zero_shot(c).await {
                Ok(v) => (v.label, None),
                Err(e) => (Label::Nei, Some(e.to_string())),
            };
            EvalRecord {
                claim: c.clone(),
                predicted,
                stage: Stage::None,
                fallback_used: false,
                error,
            }
        })
        .buffered(concurrency.max(1))
        .collect()
        .await
}

/// Uniform random labels from the mode's label set.
pub fn random_baseline(claims: &[Claim], mode: EvalMode, seed: u64) -> Vec<EvalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = mode.labels();
    claims
        .iter()
        .map(|c| EvalRecord {
            claim: c.clone(),
            predicted: labels[rng.random_range(0..labels.len())],
            stage: Stage::None,
            fallback_used: false,
            error: None,
        })
        .collect()
}
