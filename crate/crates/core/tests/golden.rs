mod common;

use common::*;
use factcheck_core::pipeline::result_is_consistent;

async fn run_set(name: &str) {
    let pipeline = fixture_pipeline(name);
    let claims = fixture_claims(name);
    let gold = golden(name);
    assert_eq!(claims.len(), gold.len());
    let mut mismatches = Vec::new();
    for (claim, g) in claims.iter().zip(&gold) {
        assert_eq!(claim.id, g.id);
        let r = pipeline.verify_claim(claim).await.unwrap_or_else(|e| panic!("{}: {e}", claim.id));
        assert!(result_is_consistent(&r, pipeline.config().k), "{}", claim.id);
        mismatches.extend(diff_golden(&r, g));
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[tokio::test]
async fn worked_examples_match() {
    run_set("examples").await;
}

#[tokio::test]
async fn fever25_matches() {
    run_set("fever25").await;
}

#[tokio::test]
async fn worked_example_reasons_survive_verbatim() {
    let pipeline = fixture_pipeline("examples");
    let claims = fixture_claims("examples");
    let r = pipeline.verify_claim(&claims[0]).await.unwrap();
    assert_eq!(
        r.verdict.reason,
        "Snippet 2 indicates Donald Trump is a President-Elect, so he is eligible to become president."
    );
    assert_eq!(r.verdict.cited_evidence, vec![1]);
    assert!(r.evidence[1].text.starts_with("Eric Trump, the second son of President-Elect Donald Trump"));
    let r = pipeline.verify_claim(&claims[2]).await.unwrap();
    assert_eq!(r.evidence[0].text, "Arya_Stark -> creator -> George_R._R._Martin");
    assert_eq!(r.verdict.cited_evidence, vec![0]);
}
