use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use factcheck_cli::{layered_config, server};
use factcheck_core::annotation::review::review_rows;
use factcheck_core::annotation::{export_nei_csv, read_csv, sufficiency_stats, write_csv, AnnotationRow};
use factcheck_core::classify::LlmClassifier;
use factcheck_core::config::{PipelineConfig, StageMode};
use factcheck_core::domain::{Claim, Label, VerificationResult};
use factcheck_core::eval::{
    evaluate, load_jsonl, metrics_for, random_baseline, sample_sr_subset, zero_shot_baseline, DatasetFormat,
    EvalMode, EvalRecord,
};
use factcheck_core::pipeline::{Pipeline, PipelineError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "factcheck", version, about = "Claim verification over DBpedia with a web-search fallback")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Key-value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay every backend from recordings in this directory.
    #[arg(long, global = true)]
    fixture_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    sparql_endpoint: Option<String>,
    #[arg(long, global = true)]
    scorer_url: Option<String>,
    #[arg(long, global = true)]
    nli_url: Option<String>,
    #[arg(long, global = true)]
    blacklist: Option<PathBuf>,
    /// Evidence items passed to the classifier.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    n_max: Option<usize>,
    #[arg(long, global = true)]
    budget_ms: Option<u64>,
    /// full, kg-only or web-only.
    #[arg(long, global = true)]
    stages: Option<String>,
    /// llm or nli.
    #[arg(long, global = true)]
    kg_classifier: Option<String>,
    /// llm or nli.
    #[arg(long, global = true)]
    web_classifier: Option<String>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: tracing::Level,
}

impl GlobalArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("fixture_dir", path(&self.fixture_dir)),
            ("sparql_endpoint", self.sparql_endpoint.clone()),
            ("scorer_url", self.scorer_url.clone()),
            ("nli_url", self.nli_url.clone()),
            ("blacklist", path(&self.blacklist)),
            ("k", self.k.map(|v| v.to_string())),
            ("n_max", self.n_max.map(|v| v.to_string())),
            ("budget_ms", self.budget_ms.map(|v| v.to_string())),
            ("stages", self.stages.clone()),
            ("kg_classifier", self.kg_classifier.clone()),
            ("web_classifier", self.web_classifier.clone()),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    None,
    ZeroShot,
    Random,
    KgOnly,
    WebOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Verify one claim and print the result as JSON.
    Verify {
        #[arg(long)]
        claim: String,
        #[arg(long, default_value = "cli-1")]
        id: String,
    },
    /// Run a labeled dataset and print precision, recall and F1.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// fever, fever2 or factkg.
        #[arg(long, default_value = "fever")]
        format: DatasetFormat,
        /// sr or srn.
        #[arg(long, default_value = "sr")]
        mode: EvalMode,
        /// Draw this many S/R claims instead of using the whole file.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_enum, default_value = "none")]
        baseline: Baseline,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Also write every VerificationResult as JSON lines.
        #[arg(long)]
        results_out: Option<PathBuf>,
    },
    /// Write a re-annotation worksheet of gold-NEI claims the pipeline labeled S or R.
    ExportNei {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "fever")]
        format: DatasetFormat,
        /// Results from `eval --results-out`; without it the pipeline is run.
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, default_value_t = 150)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
    },
    /// Agreement statistics over filled-in worksheets, one per annotator.
    Agree {
        #[arg(long = "annotations", required = true, num_args = 1..)]
        annotations: Vec<PathBuf>,
        /// Worksheet judged by the model reviewer.
        #[arg(long)]
        reviewer: Option<PathBuf>,
    },
    /// Fill a worksheet's judgments with the chat model.
    Review {
        #[arg(long)]
        worksheet: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve POST /verify and GET /healthz.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

enum Failure {
    Usage(String),
    Pipeline(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Pipeline(_) => 1,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(cli.global.log_level)
        .init();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Pipeline(m) => eprintln!("pipeline error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn config(global: &GlobalArgs) -> Result<PipelineConfig, Failure> {
    layered_config(global.config.as_deref(), |k| std::env::var(k).ok(), &global.overrides()).map_err(usage)
}

fn pipeline(config: PipelineConfig) -> Result<Pipeline, Failure> {
    Pipeline::from_config(config).map_err(usage)
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let config = config(&cli.global)?;
    match cli.command {
        Command::Verify { claim, id } => {
            let claim = Claim::new(id, claim).map_err(usage)?;
            let p = pipeline(config)?;
            match p.verify_claim(&claim).await {
                Ok(r) => {
                    print_json(&r);
                    Ok(())
                }
                Err(e) => {
                    print_json(&pipeline_error_json(&e));
                    Err(Failure::Pipeline(e.to_string()))
                }
            }
        }
        Command::Eval {
            dataset,
            format,
            mode,
            sample,
            seed,
            baseline,
            concurrency,
            results_out,
        } => {
            eval(
                config,
                &dataset,
                format,
                mode,
                sample,
                seed,
                baseline,
                concurrency,
                results_out.as_deref(),
            )
            .await
        }
        Command::ExportNei {
            dataset,
            format,
            results,
            n,
            seed,
            out,
            concurrency,
        } => {
            let claims = load_jsonl(&dataset, format).map_err(usage)?;
            let results = match results {
                Some(path) => read_results(&path)?,
                None => {
                    let nei: Vec<Claim> = claims.iter().filter(|c| c.gold_label == Some(Label::Nei)).cloned().collect();
                    let p = pipeline(config)?;
                    evaluate(&p, &nei, concurrency).await.results
                }
            };
            let by_id: HashMap<&str, &VerificationResult> = results.iter().map(|r| (r.claim_id.as_str(), r)).collect();
            let (paired_claims, paired_results): (Vec<Claim>, Vec<VerificationResult>) = claims
                .iter()
                .filter_map(|c| by_id.get(c.id.as_str()).map(|r| (c.clone(), (*r).clone())))
                .unzip();
            let export = export_nei_csv(&paired_claims, &paired_results, n, seed).map_err(|e| Failure::Pipeline(e.to_string()))?;
            std::fs::write(&out, &export.csv).map_err(|e| Failure::Pipeline(format!("{}: {e}", out.display())))?;
            print_json(&json!({
                "out": out.display().to_string(),
                "rows": export.rows.len(),
                "shortfall": export.shortfall,
            }));
            Ok(())
        }
        Command::Agree { annotations, reviewer } => {
            let humans = annotations.iter().map(|p| read_sheet(p)).collect::<Result<Vec<_>, _>>()?;
            let reviewer = reviewer.as_deref().map(read_sheet).transpose()?;
            let report = sufficiency_stats(&humans, reviewer.as_ref()).map_err(usage)?;
            print_json(&report);
            Ok(())
        }
        Command::Review { worksheet, out } => {
            let (_, rows) = read_sheet(&worksheet)?;
            let p = pipeline(config)?;
            let reviewed = review_rows(p.backends().chat.as_ref(), &rows)
                .await
                .map_err(|e| Failure::Pipeline(e.to_string()))?;
            let csv = write_csv(&reviewed).map_err(|e| Failure::Pipeline(e.to_string()))?;
            std::fs::write(&out, csv).map_err(|e| Failure::Pipeline(format!("{}: {e}", out.display())))?;
            print_json(&json!({ "out": out.display().to_string(), "rows": reviewed.len() }));
            Ok(())
        }
        Command::Serve { addr } => {
            let max_in_flight = config.max_in_flight;
            let p = Arc::new(pipeline(config)?);
            let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| usage(format!("{addr}: {e}")))?;
            tracing::info!(%addr, "listening");
            axum::serve(listener, server::router(p, max_in_flight))
                .await
                .map_err(|e| Failure::Pipeline(e.to_string()))
        }
    }
}

fn pipeline_error_json(e: &PipelineError) -> serde_json::Value {
    let kind = match e {
        PipelineError::Web { .. } => "pipeline_error",
        PipelineError::BudgetExceeded { .. } => "budget_exceeded",
        PipelineError::Config(_) => "config",
    };
    json!({
        "error": { "kind": kind, "message": e.to_string() },
        "diagnostics": e.diagnostics(),
    })
}

fn read_sheet(path: &Path) -> Result<(String, Vec<AnnotationRow>), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let rows = read_csv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((name, rows))
}

fn read_results(path: &Path) -> Result<Vec<VerificationResult>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| usage(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

#[allow(clippy::too_many_arguments)]
async fn eval(
    mut config: PipelineConfig,
    dataset: &Path,
    format: DatasetFormat,
    mode: EvalMode,
    sample: Option<usize>,
    seed: u64,
    baseline: Baseline,
    concurrency: usize,
    results_out: Option<&Path>,
) -> Result<(), Failure> {
    let all = load_jsonl(dataset, format).map_err(usage)?;
    let (claims, shortfall) = match sample {
        Some(n) => {
            let s = sample_sr_subset(&all, n, seed);
            (s.claims, s.shortfall)
        }
        None if mode == EvalMode::Sr => (
            all.into_iter()
                .filter(|c| matches!(c.gold_label, Some(Label::Supported | Label::Refuted)))
                .collect(),
            None,
        ),
        None => (all, None),
    };
    if claims.is_empty() {
        return Err(usage("no labeled claims to evaluate"));
    }

    match baseline {
        Baseline::KgOnly => config.stages = StageMode::KgOnly,
        Baseline::WebOnly => config.stages = StageMode::WebOnly,
        _ => {}
    }
    let (records, results, fallback_rate): (Vec<EvalRecord>, Vec<VerificationResult>, Option<f64>) = match baseline {
        Baseline::Random => (random_baseline(&claims, mode, seed), Vec::new(), None),
        Baseline::ZeroShot => {
            let p = pipeline(config)?;
            let llm = LlmClassifier::new(p.backends().chat.clone());
            (zero_shot_baseline(&llm, &claims, concurrency).await, Vec::new(), None)
        }
        _ => {
            let p = pipeline(config)?;
            let run = evaluate(&p, &claims, concurrency).await;
            let rate = run.records.iter().filter(|r| r.fallback_used).count() as f64 / run.records.len() as f64;
            (run.records, run.results, Some(rate))
        }
    };
    let mut report = metrics_for(&records, mode).map_err(usage)?;
    if let Some(rate) = fallback_rate {
        report = report.with_fallback_rate(rate);
    }
    eprintln!("{}", report.to_table());

    if let Some(path) = results_out {
        let mut text = String::new();
        for r in &results {
            text.push_str(&serde_json::to_string(r).expect("serializable"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Failure::Pipeline(format!("{}: {e}", path.display())))?;
    }
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    print_json(&json!({
        "metrics": report,
        "claims": records.len(),
        "failures": failures,
        "shortfall": shortfall,
    }));
    Ok(())
}
