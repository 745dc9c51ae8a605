use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

const ENV_VARS: [&str; 7] = [
    "CHAT_API_KEY",
    "SEARCH_API_KEY",
    "SEARCH_ENGINE_ID",
    "SPARQL_ENDPOINT",
    "SCORER_URL",
    "NLI_URL",
    "FIXTURE_DIR",
];

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn examples_dir() -> PathBuf {
    manifest().join("../core/fixtures/examples")
}

fn eval4_dir() -> PathBuf {
    manifest().join("tests/fixtures/eval4")
}

fn factcheck(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_factcheck"));
    for v in ENV_VARS {
        cmd.env_remove(v);
    }
    cmd.args(args).output().expect("run factcheck")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn verify_prints_result_json() {
    let dir = examples_dir();
    let out = factcheck(&[
        "--fixture-dir",
        dir.to_str().unwrap(),
        "verify",
        "--claim",
        "Arya Stark was created by George R. R. Martin.",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["final_label"], "Supported");
    assert_eq!(v["stage"], "kg");
    assert_eq!(v["fallback_used"], false);
}

#[test]
fn fixture_dir_from_env_is_honored() {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_factcheck"));
    for v in ENV_VARS {
        cmd.env_remove(v);
    }
    let out = cmd
        .env("FIXTURE_DIR", examples_dir())
        .args(["verify", "--claim", "Arya Stark was created by George R. R. Martin."])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["final_label"], "Supported");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = factcheck(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn pipeline_failure_exits_one_with_json() {
    let dir = eval4_dir();
    // no recorded rewrite for this claim, so the web stage cannot run
    let out = factcheck(&["--fixture-dir", dir.to_str().unwrap(), "verify", "--claim", "Unrecorded claim."]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["error"]["kind"], "pipeline_error");
    assert!(v["diagnostics"].is_object());
}

#[test]
fn eval_reports_hand_metrics() {
    let dir = eval4_dir();
    let dataset = dir.join("claims.jsonl");
    let out = factcheck(&[
        "--fixture-dir",
        dir.to_str().unwrap(),
        "eval",
        "--dataset",
        dataset.to_str().unwrap(),
        "--mode",
        "sr",
        "--sample",
        "4",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let m = &v["metrics"];
    // gold [S,S,R,R], predicted [S,R,R,R]
    // S: P 1, R 1/2, F1 2/3; R: P 2/3, R 1, F1 4/5
    let close = |key: &str, want: f64| {
        let got = m[key].as_f64().unwrap();
        assert!((got - want).abs() < 1e-12, "{key}: {got} vs {want}");
    };
    close("precision", (1.0 + 2.0 / 3.0) / 2.0);
    close("recall", (0.5 + 1.0) / 2.0);
    close("f1", (2.0 / 3.0 + 0.8) / 2.0);
    close("accuracy", 0.75);
    assert!((m["f1"].as_f64().unwrap() - 0.7333).abs() <= 1e-4);
    assert_eq!(m["fallback_rate"], 1.0);
    assert_eq!(v["claims"], 4);
    assert_eq!(v["failures"], 0);
}

#[test]
fn eval_random_baseline_needs_no_backends() {
    let dataset = eval4_dir().join("claims.jsonl");
    let out = factcheck(&["eval", "--dataset", dataset.to_str().unwrap(), "--baseline", "random", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["claims"], 4);
}

#[test]
fn export_then_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("nei.jsonl");
    std::fs::write(
        &dataset,
        "{\"id\": \"n1\", \"claim\": \"Sharks are mammals.\", \"label\": \"NOT ENOUGH INFO\"}\n\
         {\"id\": \"n2\", \"claim\": \"The Sahara is the largest hot desert.\", \"label\": \"NOT ENOUGH INFO\"}\n\
         {\"id\": \"s1\", \"claim\": \"Water boils at 100 degrees Celsius at sea level.\", \"label\": \"SUPPORTS\"}\n",
    )
    .unwrap();
    let sheet = tmp.path().join("sheet.csv");
    let dir = eval4_dir();
    let out = factcheck(&[
        "--fixture-dir",
        dir.to_str().unwrap(),
        "export-nei",
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        sheet.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["rows"], 2);
    assert_eq!(v["shortfall"]["requested"], 150);
    let csv = std::fs::read_to_string(&sheet).unwrap();
    assert!(csv.starts_with("nr,claim,true_label,predicted_label,found_evidence,llm_explanation,human_annotated,notes\n"));
    assert!(csv.contains("NOT ENOUGH INFO,Refuted,\"Web snippets:"));

    let header = &csv[..csv.find('\n').unwrap() + 1];
    let fill = |name: &str, judgments: [&str; 2]| {
        let mut text = header.to_string();
        for (row, j) in worksheet_rows(&csv).into_iter().zip(judgments) {
            let blank = row.strip_suffix(",,\n").expect("judgment and notes are blank");
            text.push_str(&format!("{blank},{j},\n"));
        }
        let path = tmp.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    };
    let a = fill("alice.csv", ["sufficient", "sufficient"]);
    let b = fill("bob.csv", ["sufficient", "not sufficient"]);
    let out = factcheck(&["agree", "--annotations", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["items"], 2);
    assert_eq!(v["unanimity"], 0.5);
    assert_eq!(v["sufficiency"]["at_least_one_sufficient"], 1.0);
    assert!(v.get("fleiss_kappa").is_some());
}

/// Splits a worksheet body into records (rows may span lines inside quotes).
fn worksheet_rows(csv: &str) -> Vec<String> {
    let body = &csv[csv.find('\n').unwrap() + 1..];
    let mut rows = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for ch in body.chars() {
        cur.push(ch);
        match ch {
            '"' => quoted = !quoted,
            '\n' if !quoted => rows.push(std::mem::take(&mut cur)),
            _ => {}
        }
    }
    rows
}

#[test]
fn secrets_in_config_file_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("pipeline.conf");
    std::fs::write(&conf, "k = 4\nchat_api_key = sk-should-not-be-here\n").unwrap();
    let out = factcheck(&["--config", conf.to_str().unwrap(), "verify", "--claim", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("chat_api_key"));
    assert!(!err.contains("sk-should-not-be-here"));
}

#[test]
fn bad_flag_value_is_usage_error() {
    let dir = examples_dir();
    let out = factcheck(&["--fixture-dir", dir.to_str().unwrap(), "--k", "0", "verify", "--claim", "x"]);
    assert_eq!(out.status.code(), Some(2));
}
