#![allow(dead_code)]

use std::path::PathBuf;

use factcheck_core::config::PipelineConfig;
use factcheck_core::domain::{parse_label, Claim, Stage, VerificationResult};
use factcheck_core::eval::load_fever_jsonl;
use factcheck_core::pipeline::{Backends, Pipeline};
use serde::Deserialize;

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_config(name: &str) -> PipelineConfig {
    PipelineConfig {
        fixture_dir: Some(fixture_dir(name)),
        ..PipelineConfig::default()
    }
}

pub fn fixture_pipeline(name: &str) -> Pipeline {
    let config = fixture_config(name);
    let backends = Backends::from_fixture_dir(&fixture_dir(name), &config).expect("fixture backends");
    Pipeline::new(backends, config).expect("pipeline")
}

pub fn fixture_claims(name: &str) -> Vec<Claim> {
    load_fever_jsonl(&fixture_dir(name).join("claims.jsonl")).expect("claims")
}

/// Expected outcome for one claim, computed outside the crate.
#[derive(Debug, Clone, Deserialize)]
pub struct Golden {
    pub id: String,
    pub label: String,
    pub stage: String,
    pub fallback_used: bool,
    pub cited: Vec<String>,
    pub evidence: Vec<String>,
    pub kg_label: Option<String>,
    pub entities: Vec<String>,
    #[serde(default)]
    pub web_queries: Vec<String>,
}

pub fn golden(name: &str) -> Vec<Golden> {
    let text = std::fs::read_to_string(fixture_dir(name).join("golden.json")).expect("golden.json");
    serde_json::from_str(&text).expect("golden.json parses")
}

/// Every mismatch between a result and its golden record.
pub fn diff_golden(r: &VerificationResult, g: &Golden) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |what: &str, ok: bool, detail: String| {
        if !ok {
            out.push(format!("{}: {what}: {detail}", g.id));
        }
    };
    let label = parse_label(&g.label).expect("golden label");
    check("label", r.final_label == label, format!("{:?} != {:?}", r.final_label, label));
    let stage = match g.stage.as_str() {
        "kg" => Stage::Kg,
        "web" => Stage::Web,
        _ => Stage::None,
    };
    check("stage", r.stage == stage, format!("{:?} != {:?}", r.stage, stage));
    check(
        "fallback_used",
        r.fallback_used == g.fallback_used,
        format!("{} != {}", r.fallback_used, g.fallback_used),
    );
    let texts: Vec<&str> = r.evidence.iter().map(|e| e.text.as_str()).collect();
    check("evidence", texts == g.evidence, format!("{texts:?} != {:?}", g.evidence));
    let cited: Vec<&str> = r
        .verdict
        .cited_evidence
        .iter()
        .filter_map(|&i| r.evidence.get(i).map(|e| e.text.as_str()))
        .collect();
    check("cited", cited == g.cited, format!("{cited:?} != {:?}", g.cited));
    let kg_label = match r.stage {
        Stage::Kg => Some(r.verdict.label),
        _ => r.diagnostics.kg_verdict.as_ref().map(|v| v.label),
    };
    let want_kg = g.kg_label.as_deref().map(|l| parse_label(l).expect("golden kg label"));
    check("kg label", kg_label == want_kg, format!("{kg_label:?} != {want_kg:?}"));
    check(
        "entities",
        r.diagnostics.entities == g.entities,
        format!("{:?} != {:?}", r.diagnostics.entities, g.entities),
    );
    if r.stage == Stage::Web {
        check(
            "web queries",
            r.diagnostics.web_queries == g.web_queries,
            format!("{:?} != {:?}", r.diagnostics.web_queries, g.web_queries),
        );
    }
    out
}
