//! `rdproc`: run extraction tasks over a corpus and score the results.
//!
//! Exit codes: 0 success, 1 the run finished but some chunks failed,
//! 2 usage or configuration errors. The last line on stdout is always a
//! JSON summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rdproc::ingest::{self, load_ground_truth, GroundTruth, GroundTruthKind};
use rdproc::pipeline::{
    check_instruction_budget, load_corpus, load_result, run_repeated, task_from_config, write_run, AdapterMode, PipelineConfig,
    RunResult,
};
use rdproc::provider::{CassetteStore, CompletionAdapter, LiveAdapter, RecordingAdapter, ReplayAdapter};
use rdproc::report::{
    accuracy_report, consistency_across_runs, consistency_report_csv, diff_counts, diff_rows_csv, diff_seedlist_runs,
};
use rdproc::tasks::hta::consistency_csv;
use rdproc::tasks::kickstarter::{
    agreement_report_csv, pairwise_agreement, parse_ratings_csv, ratings_from_records, NaicsTable, GENAI_RATER,
};
use rdproc::tasks::TASK_NAMES;

#[derive(Debug, Parser)]
#[command(name = "rdproc", version, about = "Chunked, replayable LLM extraction with reliability reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a task over a corpus directory (or a CSV of projects).
    Run(RunArgs),
    /// Score one run against a ground-truth file.
    EvalAccuracy(EvalAccuracyArgs),
    /// Measure agreement between repeated runs.
    EvalConsistency(EvalConsistencyArgs),
    /// Classify how seedlist names differ between runs.
    DiffSeedlist(DiffSeedlistArgs),
    /// Pairwise industry-code agreement between raters.
    Agree(AgreeArgs),
    /// Check a config file and report every problem found.
    ValidateConfig(ValidateConfigArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// seedlist, hta or kickstarter
    task: String,
    corpus: PathBuf,
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    runs: u32,
    #[arg(long)]
    mode: Option<AdapterMode>,
    #[arg(long)]
    cassettes: Option<PathBuf>,
    #[arg(long)]
    runs_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalAccuracyArgs {
    run_dir: PathBuf,
    truth: PathBuf,
}

#[derive(Debug, Args)]
struct EvalConsistencyArgs {
    #[arg(required = true, num_args = 2..)]
    run_dirs: Vec<PathBuf>,
    /// Report directory; defaults to `eval/` inside the first run.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiffSeedlistArgs {
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    /// OCR text the names were read from: a corpus directory or one file.
    #[arg(long)]
    ocr: Option<PathBuf>,
    /// Species-set ground truth used as the reference instead of the majority.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AgreeArgs {
    ratings: PathBuf,
    /// Adds the codes of a classification run as rater "genai".
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    naics_table: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateConfigArgs {
    config: PathBuf,
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        usage(error)
    }
}

struct Success {
    code: u8,
    summary: Value,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("RDPROC_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            println!("{}", json!({"status": "error", "code": 2, "error": "invalid arguments"}));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(s) => {
            println!("{}", s.summary);
            ExitCode::from(s.code)
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            println!("{}", json!({"status": "error", "code": f.code, "error": format!("{:#}", f.error)}));
            ExitCode::from(f.code)
        }
    }
}

fn execute(command: Command) -> Result<Success, Failure> {
    match command {
        Command::Run(a) => run(a),
        Command::EvalAccuracy(a) => eval_accuracy(a),
        Command::EvalConsistency(a) => eval_consistency(a),
        Command::DiffSeedlist(a) => diff_seedlist(a),
        Command::Agree(a) => agree(a),
        Command::ValidateConfig(a) => validate_config(a),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig {
            base_dir: std::env::current_dir()?,
            ..Default::default()
        }),
    }
}

fn check(config: &PipelineConfig) -> anyhow::Result<()> {
    let diagnostics = config.diagnostics();
    if diagnostics.is_empty() {
        Ok(())
    } else {
        bail!("invalid configuration:\n  {}", diagnostics.join("\n  "))
    }
}

fn make_adapter(config: &PipelineConfig) -> anyhow::Result<Box<dyn CompletionAdapter>> {
    let cassettes = config.cassette_path();
    Ok(match config.mode {
        AdapterMode::Replay => {
            if !cassettes.is_dir() {
                bail!("replay mode needs the cassette directory {}", cassettes.display());
            }
            Box::new(ReplayAdapter::new(CassetteStore::new(cassettes)))
        }
        AdapterMode::Live => Box::new(LiveAdapter::from_env(config.live.clone())?),
        AdapterMode::Record => Box::new(RecordingAdapter::new(
            LiveAdapter::from_env(config.live.clone())?,
            CassetteStore::new(cassettes),
        )),
    })
}

fn run(args: RunArgs) -> Result<Success, Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(c) = args.cassettes {
        config.cassette_dir = absolute(&c)?;
    }
    if let Some(r) = args.runs_dir {
        config.runs_dir = absolute(&r)?;
    }
    check(&config)?;
    let task = task_from_config(&args.task, &config).map_err(|e| usage(e.into()))?;
    let corpus = load_corpus(&args.corpus).with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let adapter = make_adapter(&config)?;

    // Every run completes before anything is written, so a fatal error
    // leaves no partial artifacts behind.
    let runs = run_repeated(&corpus, task.as_ref(), adapter.as_ref(), &config, args.runs as usize)
        .map_err(|e| usage(e.into()))?;
    let mut summaries = Vec::new();
    let mut partial = false;
    for (result, manifest) in &runs {
        let dir = write_run(&config.runs_path(), result, manifest).map_err(|e| usage(e.into()))?;
        partial |= result.has_failures();
        println!(
            "run {}: {} records, {} failed chunks, {} unplannable documents -> {}",
            result.run_id,
            result.records.len(),
            result.failures.len(),
            result.plan_failures.len(),
            dir.display()
        );
        summaries.push(json!({
            "run_id": result.run_id,
            "dir": dir,
            "records": result.records.len(),
            "failures": result.failures.len(),
            "plan_failures": result.plan_failures.len(),
        }));
    }
    Ok(Success {
        code: u8::from(partial),
        summary: json!({
            "command": "run",
            "status": if partial { "partial" } else { "ok" },
            "task": args.task,
            "mode": config.mode.to_string(),
            "runs": summaries,
        }),
    })
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    Ok(if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) })
}

fn truth_kind(task: &str) -> anyhow::Result<GroundTruthKind> {
    Ok(match task {
        "seedlist" => GroundTruthKind::SpeciesSet,
        "hta" => GroundTruthKind::HtaRecord,
        "kickstarter" => GroundTruthKind::NaicsLabel,
        other => bail!("run has unknown task {other:?}"),
    })
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval_accuracy(args: EvalAccuracyArgs) -> Result<Success, Failure> {
    let result = load_result(&args.run_dir).map_err(|e| usage(e.into()))?;
    let truth = load_ground_truth(&args.truth, truth_kind(&result.task_name)?).map_err(|e| usage(e.into()))?;
    let report = accuracy_report(&result, &truth).map_err(|e| usage(e.into()))?;

    let out = args.run_dir.join("eval");
    let mut csv = String::from("key,precision,recall,accuracy,matched,predicted,truth\n");
    for k in &report.per_key {
        let m = &k.metrics;
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{},{},{}\n",
            k.key, m.precision, m.recall, m.accuracy, m.matched, m.predicted, m.truth
        ));
    }
    write_file(&out.join("accuracy.csv"), &csv)?;
    write_file(&out.join("accuracy.json"), &pretty(&report))?;
    let o = &report.overall;
    println!(
        "{}: precision {:.4}, recall {:.4}, accuracy {:.4} over {} keys",
        report.run_id,
        o.precision,
        o.recall,
        o.accuracy,
        report.per_key.len()
    );
    Ok(Success {
        code: 0,
        summary: json!({
            "command": "eval-accuracy",
            "status": "ok",
            "run_id": report.run_id,
            "precision": o.precision,
            "recall": o.recall,
            "accuracy": o.accuracy,
            "precision_undefined": o.precision_undefined,
            "keys": report.per_key.len(),
            "report": out.join("accuracy.json"),
        }),
    })
}

fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn load_results(dirs: &[PathBuf]) -> Result<Vec<RunResult>, Failure> {
    dirs.iter()
        .map(|d| load_result(d).map_err(|e| usage(e.into())))
        .collect()
}

fn eval_consistency(args: EvalConsistencyArgs) -> Result<Success, Failure> {
    let results = load_results(&args.run_dirs)?;
    let summary = consistency_across_runs(&results).map_err(|e| usage(e.into()))?;
    let out = args.out.unwrap_or_else(|| args.run_dirs[0].join("eval"));
    write_file(&out.join("consistency.csv"), &consistency_report_csv(&summary.reports))?;
    write_file(&out.join("consistency.json"), &pretty(&summary))?;
    let mut divergent_fields = Vec::new();
    if let Some(fields) = &summary.hta_fields {
        write_file(&out.join("hta_fields.csv"), &consistency_csv(fields))?;
        for (doc, reports) in fields {
            for r in reports.iter().filter(|r| r.status != rdproc::tasks::hta::FieldStatus::Consistent) {
                divergent_fields.push(json!({"document": doc, "field": r.field, "status": r.status.to_string()}));
            }
        }
    }
    println!(
        "{} runs, {} keys: full agreement {:.4}, mean agreement {:.4}",
        results.len(),
        summary.reports.len(),
        summary.full_agreement,
        summary.mean_agreement
    );
    Ok(Success {
        code: 0,
        summary: json!({
            "command": "eval-consistency",
            "status": "ok",
            "runs": summary.run_ids,
            "keys": summary.reports.len(),
            "full_agreement": summary.full_agreement,
            "mean_agreement": summary.mean_agreement,
            "divergent_fields": divergent_fields,
            "out": out,
        }),
    })
}

fn ocr_sources(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    if path.is_dir() {
        let corpus = ingest::load_corpus_dir(path)?;
        return Ok(corpus.documents().iter().map(|d| (d.id.clone(), d.text.clone())).collect());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| anyhow!("OCR source {} has no file name", path.display()))?;
    Ok([(stem, text)].into_iter().collect())
}

fn diff_seedlist(args: DiffSeedlistArgs) -> Result<Success, Failure> {
    let results = load_results(&args.run_dirs)?;
    let sources = match &args.ocr {
        Some(p) => ocr_sources(p)?,
        None => BTreeMap::new(),
    };
    let truth = match &args.truth {
        Some(p) => match load_ground_truth(p, GroundTruthKind::SpeciesSet).map_err(|e| usage(e.into()))? {
            GroundTruth::SpeciesSet(m) => Some(m),
            _ => unreachable!("loader returns the requested kind"),
        },
        None => None,
    };
    let rows = diff_seedlist_runs(&results, truth.as_ref(), &sources).map_err(|e| usage(e.into()))?;
    let counts = diff_counts(&rows);
    let out = args.out.unwrap_or_else(|| args.run_dirs[0].join("eval"));
    write_file(&out.join("seedlist_diff.csv"), &diff_rows_csv(&rows))?;
    for (category, n) in &counts {
        println!("{category}: {n}");
    }
    Ok(Success {
        code: 0,
        summary: json!({
            "command": "diff-seedlist",
            "status": "ok",
            "cells": rows.len(),
            "counts": counts,
            "report": out.join("seedlist_diff.csv"),
        }),
    })
}

fn agree(args: AgreeArgs) -> Result<Success, Failure> {
    let table = match &args.naics_table {
        Some(p) => NaicsTable::load(p).map_err(|e| usage(e.into()))?,
        None => NaicsTable::shipped(),
    };
    let text = std::fs::read_to_string(&args.ratings).with_context(|| format!("reading {}", args.ratings.display()))?;
    let mut ratings = parse_ratings_csv(&text, &table).map_err(|e| usage(anyhow!("{}: {e}", args.ratings.display())))?;
    if let Some(run_dir) = &args.run {
        let result = load_result(run_dir).map_err(|e| usage(e.into()))?;
        if result.task_name != "kickstarter" {
            return Err(usage(anyhow!("--run must point at a kickstarter run, got {:?}", result.task_name)));
        }
        let fields = result.records.iter().map(|r| &r.fields);
        ratings.extend(ratings_from_records(fields, GENAI_RATER, &table).map_err(|e| usage(e.into()))?);
    }
    let report = pairwise_agreement(&ratings);
    let csv = agreement_report_csv(&report);
    if let Some(out) = &args.out {
        write_file(out, &csv)?;
    }
    print!("{csv}");
    let pairs: Vec<Value> = report
        .iter()
        .map(|((a, b), p)| {
            json!({
                "rater_a": a,
                "rater_b": b,
                "shared": p.shared,
                "matched": p.matched,
                "fraction": p.fraction,
                "sector_matched": p.sector_matched,
            })
        })
        .collect();
    Ok(Success {
        code: 0,
        summary: json!({"command": "agree", "status": "ok", "ratings": ratings.len(), "pairs": pairs}),
    })
}

fn validate_config(args: ValidateConfigArgs) -> Result<Success, Failure> {
    let config = PipelineConfig::load(&args.config).map_err(|e| usage(e.into()))?;
    let mut diagnostics = config.diagnostics();
    if diagnostics.is_empty() {
        for task in TASK_NAMES {
            let checked = task_from_config(task, &config)
                .and_then(|t| check_instruction_budget(t.as_ref(), &config));
            if let Err(e) = checked {
                diagnostics.push(format!("{task}: {e}"));
            }
        }
    }
    if !diagnostics.is_empty() {
        for d in &diagnostics {
            eprintln!("{}: {d}", args.config.display());
        }
        return Ok(Success {
            code: 2,
            summary: json!({"command": "validate-config", "status": "invalid", "diagnostics": diagnostics}),
        });
    }
    println!("{}: ok (config hash {})", args.config.display(), config.config_hash());
    Ok(Success {
        code: 0,
        summary: json!({"command": "validate-config", "status": "ok", "config_hash": config.config_hash()}),
    })
}
