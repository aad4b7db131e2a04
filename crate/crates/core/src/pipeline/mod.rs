//! Run orchestration: plan chunks, prompt, complete, extract, validate and
//! merge, with a manifest that lets a run be re-derived from its cassettes.

mod config;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{check_output_budget, estimate_tokens, plan_chunks, Chunk, ChunkError};
use crate::extraction::{extract_json_value_with, validate_records, Record};
use crate::ingest::{self, Corpus, IngestError, SourceDocument, KICKSTARTER_COLUMNS};
use crate::prompting::{PromptError, PromptTemplate};
use crate::provider::{
    cache_key, complete_with_retry, CacheKey, CassetteStore, Clock, CompletionAdapter, ModelRequest, ModelResponse,
    ProviderError, RateLimiter, ReplayAdapter, RetryOutcome, StopReason, SystemClock,
};
use crate::tasks::{self, build_task, kickstarter::NaicsTable, Task, TaskError, TaskOptions};

pub use config::{AdapterMode, ConfigError, PipelineConfig, TemplatePaths};

pub const RESULT_FILE: &str = "result.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChunkOutcome {
    Ok,
    MalformedOutput,
    RetriesExhausted,
    OutputBudgetExceeded,
}

impl std::fmt::Display for ChunkOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChunkOutcome::Ok => "ok",
            ChunkOutcome::MalformedOutput => "malformed-output",
            ChunkOutcome::RetriesExhausted => "retries-exhausted",
            ChunkOutcome::OutputBudgetExceeded => "output-budget-exceeded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub doc_id: String,
    pub chunk_index: usize,
    /// Position within the chunk's answer.
    pub position: usize,
    /// Position within the document, across chunks.
    pub record_index: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub fields: Record,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub doc_id: String,
    pub chunk_index: usize,
    pub outcome: ChunkOutcome,
    pub detail: String,
}

/// A document that could not be split at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFailure {
    pub doc_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub task_name: String,
    pub records: Vec<OutputRecord>,
    pub failures: Vec<ChunkFailure>,
    #[serde(default)]
    pub plan_failures: Vec<PlanFailure>,
}

impl RunResult {
    pub fn has_failures(&self) -> bool {
        !(self.failures.is_empty() && self.plan_failures.is_empty())
    }

    /// Records and failures without the run id: equal for equal runs.
    pub fn canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            task_name: &'a str,
            records: &'a [OutputRecord],
            failures: &'a [ChunkFailure],
            plan_failures: &'a [PlanFailure],
        }
        serde_json::to_string_pretty(&Canonical {
            task_name: &self.task_name,
            records: &self.records,
            failures: &self.failures,
            plan_failures: &self.plan_failures,
        })
        .expect("run result serializes")
    }

    pub fn records_for<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a OutputRecord> + 'a {
        self.records.iter().filter(move |r| r.doc_id == doc_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub chunk_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub estimated_tokens: u64,
    /// Absent when the chunk was rejected before any request was built.
    pub cache_key: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub follow_up_keys: Vec<String>,
    pub attempts: u32,
    pub outcome: ChunkOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub id: String,
    pub language: String,
    pub chars: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBodies {
    pub prompt: String,
    pub follow_up: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub task_name: String,
    pub model_id: String,
    pub temperature: f64,
    pub mode: AdapterMode,
    pub template_hash: String,
    pub follow_up_template_hash: Option<String>,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Directory the config's relative paths resolve against.
    #[serde(default)]
    pub config_dir: PathBuf,
    pub templates: TemplateBodies,
    pub documents: Vec<DocumentRef>,
    pub entries: Vec<ManifestEntry>,
    pub plan_failures: Vec<PlanFailure>,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("invalid request: {0}")]
    Request(ProviderError),
    #[error("no cassette for {doc_id} chunk {chunk_index} (key {key})")]
    ReplayMiss { doc_id: String, chunk_index: usize, key: String },
    #[error("provider unreachable: every completion failed ({0})")]
    Unreachable(String),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl PipelineError {
    /// Errors caused by setup rather than by the data or the provider.
    pub fn is_usage(&self) -> bool {
        !matches!(self, PipelineError::Artifact { .. })
    }
}

/// Records of one chunk, tagged with where they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRecords {
    pub doc_id: String,
    pub chunk_index: usize,
    pub records: Vec<(Record, Vec<String>)>,
}

/// Flattens chunk outputs in (doc_id, chunk index, in-chunk position) order.
/// Nothing is deduplicated.
pub fn merge_chunk_outputs(mut chunks: Vec<ChunkRecords>) -> Vec<OutputRecord> {
    chunks.sort_by(|a, b| (&a.doc_id, a.chunk_index).cmp(&(&b.doc_id, b.chunk_index)));
    let mut out = Vec::new();
    let mut current_doc: Option<String> = None;
    let mut record_index = 0;
    for chunk in chunks {
        if current_doc.as_deref() != Some(chunk.doc_id.as_str()) {
            current_doc = Some(chunk.doc_id.clone());
            record_index = 0;
        }
        for (position, (fields, flags)) in chunk.records.into_iter().enumerate() {
            out.push(OutputRecord {
                doc_id: chunk.doc_id.clone(),
                chunk_index: chunk.chunk_index,
                position,
                record_index,
                flags,
                fields,
            });
            record_index += 1;
        }
    }
    out
}

pub fn new_run_id() -> String {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let id = uuid::Uuid::new_v4().simple().to_string();
    format!("{stamp}-{}", &id[..12])
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Builds the named task with the templates, policy and code table the
/// config points at.
pub fn task_from_config(name: &str, config: &PipelineConfig) -> Result<Box<dyn Task>, PipelineError> {
    let template = match &config.templates.prompt {
        Some(p) => Some(PromptTemplate::from_file(config.resolve(p), ["data", "schema"])?),
        None => None,
    };
    let follow_up_template = match &config.templates.follow_up {
        Some(p) => Some(PromptTemplate::from_file(config.resolve(p), ["fields", "target_language"])?),
        None => None,
    };
    let naics_table = match &config.naics_table {
        Some(p) => Some(NaicsTable::load(config.resolve(p)).map_err(|e| {
            PipelineError::Config(ConfigError::Invalid(vec![format!("naics_table: {e}")]))
        })?),
        None => None,
    };
    Ok(build_task(
        name,
        TaskOptions {
            template,
            follow_up_template,
            field_policy: Some(config.field_policy.clone()),
            naics_table,
        },
    )?)
}

/// Loads a corpus for a task: a CSV file becomes one document of rows,
/// anything else is read as a corpus directory.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, PipelineError> {
    let path = path.as_ref();
    if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let batch = ingest::load_csv_records(path, &KICKSTARTER_COLUMNS)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let doc = batch.to_document(&stem, &KICKSTARTER_COLUMNS)?;
        return Ok(Corpus::new(vec![doc])?);
    }
    Ok(ingest::load_corpus_dir(path)?)
}

struct ChunkReport {
    entry: ManifestEntry,
    records: Vec<(Record, Vec<String>)>,
    /// False when no completion ever reached the provider.
    reached: bool,
}

struct Runner<'a> {
    task: &'a dyn Task,
    adapter: &'a dyn CompletionAdapter,
    config: &'a PipelineConfig,
    clock: &'a dyn Clock,
    limiter: Option<RateLimiter>,
}

fn unreached(err: &ProviderError) -> bool {
    match err {
        ProviderError::Transport(_) | ProviderError::AuthError(_) | ProviderError::Timeout => true,
        ProviderError::RetriesExhausted { last, .. } => unreached(last),
        _ => false,
    }
}

impl<'a> Runner<'a> {
    fn new(task: &'a dyn Task, adapter: &'a dyn CompletionAdapter, config: &'a PipelineConfig, clock: &'a dyn Clock) -> Self {
        // Replayed completions cost no provider budget.
        let limiter = (config.mode != AdapterMode::Replay).then(|| RateLimiter::new(config.rate));
        Runner { task, adapter, config, clock, limiter }
    }

    fn request(&self, prompt: String) -> Result<(ModelRequest, CacheKey), PipelineError> {
        let request = ModelRequest {
            model_id: self.config.model_id.clone(),
            temperature: self.config.temperature,
            max_output_tokens: self.config.budget.max_output_tokens,
            prompt,
        };
        request
            .validate(self.config.allow_nonzero_temperature)
            .map_err(PipelineError::Request)?;
        let key = cache_key(&request);
        Ok((request, key))
    }

    fn call(&self, request: &ModelRequest) -> Result<RetryOutcome, ProviderError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire(estimate_tokens(&request.prompt, &self.config.estimator), self.clock)?;
        }
        complete_with_retry(self.adapter, request, &self.config.retry, self.clock)
    }

    fn entry(chunk: &Chunk) -> ManifestEntry {
        ManifestEntry {
            doc_id: chunk.doc_id.clone(),
            chunk_index: chunk.index,
            char_start: chunk.char_start,
            char_end: chunk.char_end,
            estimated_tokens: chunk.estimated_tokens,
            cache_key: None,
            follow_up_keys: Vec::new(),
            attempts: 0,
            outcome: ChunkOutcome::Ok,
            detail: None,
        }
    }

    fn fail(mut entry: ManifestEntry, outcome: ChunkOutcome, detail: impl Into<String>) -> ChunkReport {
        entry.outcome = outcome;
        entry.detail = Some(detail.into());
        ChunkReport { entry, records: Vec::new(), reached: true }
    }

    fn provider_failure(mut entry: ManifestEntry, err: ProviderError, key: &CacheKey) -> Result<ChunkReport, PipelineError> {
        if let ProviderError::ReplayMiss(_) = err {
            return Err(PipelineError::ReplayMiss {
                doc_id: entry.doc_id,
                chunk_index: entry.chunk_index,
                key: key.to_string(),
            });
        }
        entry.attempts += match &err {
            ProviderError::RetriesExhausted { attempts, .. } => *attempts,
            ProviderError::Unadmittable { .. } => 0,
            _ => 1,
        };
        let reached = !unreached(&err);
        let mut report = Self::fail(entry, ChunkOutcome::RetriesExhausted, err.to_string());
        report.reached = reached;
        Ok(report)
    }

    fn process_chunk(&self, doc: &SourceDocument, chunk: &Chunk) -> Result<ChunkReport, PipelineError> {
        let entry = Self::entry(chunk);
        if let Err(e) = check_output_budget(chunk, &self.config.budget) {
            return Ok(Self::fail(entry, ChunkOutcome::OutputBudgetExceeded, e.to_string()));
        }
        let prompt = self.task.template().render(&self.task.bindings(chunk, doc))?;
        let (request, key) = self.request(prompt)?;
        let mut entry = entry;
        entry.cache_key = Some(key.to_string());
        match self.call(&request) {
            Ok(outcome) => {
                entry.attempts = outcome.attempts;
                self.finish(entry, doc, &outcome.response)
            }
            Err(e) => Self::provider_failure(entry, e, &key),
        }
    }

    /// Everything after the primary completion: extraction, validation,
    /// per-record checks and the optional second prompt.
    fn finish(&self, mut entry: ManifestEntry, doc: &SourceDocument, response: &ModelResponse) -> Result<ChunkReport, PipelineError> {
        if let Some(failure) = stop_failure(response) {
            return Ok(Self::fail(entry, failure.0, failure.1));
        }
        let value = match extract_json_value_with(&response.text, self.config.extract_mode) {
            Ok(v) => v,
            Err(e) => return Ok(Self::fail(entry, ChunkOutcome::MalformedOutput, e.to_string())),
        };
        let records = match validate_records(&value, self.task.schema()) {
            Ok(r) => r,
            Err(e) => return Ok(Self::fail(entry, ChunkOutcome::MalformedOutput, e.to_string())),
        };
        let mut out = Vec::with_capacity(records.len());
        for (i, mut record) in records.into_iter().enumerate() {
            let flags = match self.task.finalize_record(&mut record, doc) {
                Ok(f) => f,
                Err(e) => return Ok(Self::fail(entry, ChunkOutcome::MalformedOutput, format!("record {i}: {e}"))),
            };
            let follow_up = self
                .task
                .follow_up_template()
                .zip(self.task.follow_up_bindings(&record, doc));
            if let Some((template, bindings)) = follow_up {
                let (request, key) = self.request(template.render(&bindings)?)?;
                entry.follow_up_keys.push(key.to_string());
                let answer = match self.call(&request) {
                    Ok(o) => {
                        entry.attempts += o.attempts;
                        o.response
                    }
                    Err(e) => return Self::provider_failure(entry, e, &key),
                };
                if let Some((outcome, detail)) = stop_failure(&answer) {
                    return Ok(Self::fail(entry, outcome, format!("record {i} second pass: {detail}")));
                }
                let applied = extract_json_value_with(&answer.text, self.config.extract_mode)
                    .map_err(|e| e.to_string())
                    .and_then(|v| self.task.apply_follow_up(&mut record, &v));
                if let Err(e) = applied {
                    return Ok(Self::fail(entry, ChunkOutcome::MalformedOutput, format!("record {i} second pass: {e}")));
                }
            }
            out.push((record, flags));
        }
        Ok(ChunkReport { entry, records: out, reached: true })
    }
}

fn stop_failure(response: &ModelResponse) -> Option<(ChunkOutcome, &'static str)> {
    match response.stop_reason {
        StopReason::Complete => None,
        StopReason::Length => Some((ChunkOutcome::OutputBudgetExceeded, "completion truncated at max_output_tokens")),
        StopReason::Error => Some((ChunkOutcome::MalformedOutput, "provider reported an error stop")),
    }
}

fn document_ref(doc: &SourceDocument) -> DocumentRef {
    DocumentRef {
        id: doc.id.clone(),
        language: doc.language.clone(),
        chars: doc.text.chars().count(),
        sha256: hex::encode(Sha256::digest(doc.text.as_bytes())),
    }
}

/// The template's fixed text plus the schema must fit
/// `budget.instruction_tokens`.
pub fn check_instruction_budget(task: &dyn Task, config: &PipelineConfig) -> Result<(), PipelineError> {
    let fixed = task.template().instruction_text() + &tasks::schema_prompt_text(task.schema());
    let needed = estimate_tokens(&fixed, &config.estimator);
    if needed > config.budget.instruction_tokens {
        return Err(ConfigError::Invalid(vec![format!(
            "template and schema need about {needed} tokens but budget.instruction_tokens is {}",
            config.budget.instruction_tokens
        )])
        .into());
    }
    Ok(())
}

fn run_workers<'a>(
    runner: &Runner<'_>,
    jobs: &[(&'a SourceDocument, Chunk)],
    workers: usize,
) -> Result<Vec<ChunkReport>, PipelineError> {
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<ChunkReport, PipelineError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((doc, chunk)) = jobs.get(i) else { break };
                let report = runner.process_chunk(doc, chunk);
                if report.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                *slots[i].lock().expect("result slot") = Some(report);
            });
        }
    });
    let mut reports = Vec::with_capacity(jobs.len());
    for slot in slots {
        match slot.into_inner().expect("result slot") {
            Some(r) => reports.push(r?),
            // only reachable after an abort, whose error comes first
            None => continue,
        }
    }
    Ok(reports)
}

fn assemble(run_id: &str, task: &dyn Task, reports: Vec<ChunkReport>, plan_failures: Vec<PlanFailure>) -> (RunResult, Vec<ManifestEntry>) {
    let mut chunks = Vec::new();
    let mut failures = Vec::new();
    let mut entries = Vec::new();
    for report in reports {
        let e = &report.entry;
        if e.outcome == ChunkOutcome::Ok {
            chunks.push(ChunkRecords {
                doc_id: e.doc_id.clone(),
                chunk_index: e.chunk_index,
                records: report.records,
            });
        } else {
            failures.push(ChunkFailure {
                doc_id: e.doc_id.clone(),
                chunk_index: e.chunk_index,
                outcome: e.outcome,
                detail: e.detail.clone().unwrap_or_default(),
            });
        }
        entries.push(report.entry);
    }
    entries.sort_by(|a, b| (&a.doc_id, a.chunk_index).cmp(&(&b.doc_id, b.chunk_index)));
    failures.sort_by(|a, b| (&a.doc_id, a.chunk_index).cmp(&(&b.doc_id, b.chunk_index)));
    let result = RunResult {
        run_id: run_id.to_string(),
        task_name: task.name().to_string(),
        records: merge_chunk_outputs(chunks),
        failures,
        plan_failures,
    };
    (result, entries)
}

pub fn run_task(
    corpus: &Corpus,
    task: &dyn Task,
    adapter: &dyn CompletionAdapter,
    config: &PipelineConfig,
) -> Result<(RunResult, RunManifest), PipelineError> {
    run_task_with_clock(corpus, task, adapter, config, &SystemClock::new())
}

pub fn run_task_with_clock(
    corpus: &Corpus,
    task: &dyn Task,
    adapter: &dyn CompletionAdapter,
    config: &PipelineConfig,
    clock: &dyn Clock,
) -> Result<(RunResult, RunManifest), PipelineError> {
    config.validate()?;
    check_instruction_budget(task, config)?;
    let started_at = now_rfc3339();
    let run_id = new_run_id();

    let mut docs: Vec<&SourceDocument> = corpus.documents().iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let boundary = config.boundary.unwrap_or_else(|| task.default_boundary());
    let mut jobs = Vec::new();
    let mut plan_failures = Vec::new();
    for doc in &docs {
        match plan_chunks(doc, &config.budget, &config.estimator, boundary) {
            Ok(plan) => jobs.extend(plan.chunks.into_iter().map(|c| (*doc, c))),
            Err(e @ ChunkError::InvalidConfig(_)) => {
                return Err(ConfigError::Invalid(vec![e.to_string()]).into());
            }
            Err(e) => plan_failures.push(PlanFailure { doc_id: doc.id.clone(), detail: e.to_string() }),
        }
    }
    tracing::info!(run_id, task = task.name(), chunks = jobs.len(), "starting run");

    let runner = Runner::new(task, adapter, config, clock);
    let reports = run_workers(&runner, &jobs, config.workers)?;
    if !reports.is_empty() && reports.iter().all(|r| !r.reached) {
        let detail = reports[0].entry.detail.clone().unwrap_or_default();
        return Err(PipelineError::Unreachable(detail));
    }
    let (result, entries) = assemble(&run_id, task, reports, plan_failures.clone());

    let manifest = RunManifest {
        run_id,
        task_name: task.name().to_string(),
        model_id: config.model_id.clone(),
        temperature: config.temperature,
        mode: config.mode,
        template_hash: task.template().hash(),
        follow_up_template_hash: task.follow_up_template().map(PromptTemplate::hash),
        config_hash: config.config_hash(),
        config: config.clone(),
        config_dir: config.base_dir.clone(),
        templates: TemplateBodies {
            prompt: task.template().body().to_string(),
            follow_up: task.follow_up_template().map(|t| t.body().to_string()),
        },
        documents: docs.iter().map(|d| document_ref(d)).collect(),
        entries,
        plan_failures,
        started_at,
        finished_at: now_rfc3339(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok((result, manifest))
}

/// `n` independent runs, each with its own run id, in order.
pub fn run_repeated(
    corpus: &Corpus,
    task: &dyn Task,
    adapter: &dyn CompletionAdapter,
    config: &PipelineConfig,
    n: usize,
) -> Result<Vec<(RunResult, RunManifest)>, PipelineError> {
    if n == 0 {
        return Err(ConfigError::Invalid(vec!["number of runs must be at least 1".into()]).into());
    }
    (0..n).map(|_| run_task(corpus, task, adapter, config)).collect()
}

/// Re-derives a run's result from its manifest and the cassettes alone.
pub fn reproduce(manifest: &RunManifest, store: &CassetteStore) -> Result<RunResult, PipelineError> {
    let mut config = manifest.config.clone();
    config.mode = AdapterMode::Replay;
    let prompt = PromptTemplate::new(manifest.task_name.clone(), manifest.templates.prompt.clone(), ["data", "schema"])?;
    let follow_up = manifest
        .templates
        .follow_up
        .as_ref()
        .map(|b| PromptTemplate::new("follow_up", b.clone(), ["fields", "target_language"]))
        .transpose()?;
    let naics_table = match &config.naics_table {
        Some(p) => Some(NaicsTable::load(config.resolve(p)).map_err(|e| {
            PipelineError::Config(ConfigError::Invalid(vec![format!("naics_table: {e}")]))
        })?),
        None => None,
    };
    let task = build_task(
        &manifest.task_name,
        TaskOptions {
            template: Some(prompt),
            follow_up_template: follow_up,
            field_policy: Some(config.field_policy.clone()),
            naics_table,
        },
    )?;
    let replay = ReplayAdapter::new(store.clone());
    let clock = SystemClock::new();
    let runner = Runner::new(task.as_ref(), &replay, &config, &clock);

    let mut reports = Vec::with_capacity(manifest.entries.len());
    for recorded in &manifest.entries {
        let doc_ref = manifest.documents.iter().find(|d| d.id == recorded.doc_id);
        let language = doc_ref.map_or(ingest::DEFAULT_LANGUAGE, |d| d.language.as_str());
        let doc = SourceDocument::new(recorded.doc_id.clone(), "").with_language(language);
        let mut entry = recorded.clone();
        entry.follow_up_keys.clear();
        entry.outcome = ChunkOutcome::Ok;
        entry.detail = None;
        let cassette = match &recorded.cache_key {
            Some(k) => {
                let key = CacheKey::parse(k).ok_or_else(|| PipelineError::Artifact {
                    path: PathBuf::from(MANIFEST_FILE),
                    message: format!("malformed cache key {k:?}"),
                })?;
                store.load(&key).map_err(PipelineError::Request)?
            }
            None => None,
        };
        let report = match cassette {
            Some(c) => runner.finish(entry, &doc, &c.response)?,
            None if recorded.outcome != ChunkOutcome::Ok => ChunkReport {
                entry: recorded.clone(),
                records: Vec::new(),
                reached: true,
            },
            None => {
                return Err(PipelineError::ReplayMiss {
                    doc_id: recorded.doc_id.clone(),
                    chunk_index: recorded.chunk_index,
                    key: recorded.cache_key.clone().unwrap_or_default(),
                })
            }
        };
        reports.push(report);
    }
    let (result, _) = assemble(&manifest.run_id, task.as_ref(), reports, manifest.plan_failures.clone());
    Ok(result)
}

fn artifact_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| artifact_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| artifact_err(path, e))
}

/// Writes `result.json` and `manifest.json` under `runs_dir/<run_id>/`.
/// Files land in a staging directory first, so a run directory is either
/// complete or absent.
pub fn write_run(runs_dir: &Path, result: &RunResult, manifest: &RunManifest) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(runs_dir).map_err(|e| artifact_err(runs_dir, e))?;
    let dir = runs_dir.join(&result.run_id);
    if dir.exists() {
        return Err(artifact_err(&dir, "run directory already exists"));
    }
    let staging = runs_dir.join(format!(".{}.partial", result.run_id));
    std::fs::create_dir_all(&staging).map_err(|e| artifact_err(&staging, e))?;
    write_json(&staging.join(RESULT_FILE), result)?;
    write_json(&staging.join(MANIFEST_FILE), manifest)?;
    std::fs::rename(&staging, &dir).map_err(|e| artifact_err(&dir, e))?;
    Ok(dir)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| artifact_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| artifact_err(path, e))
}

pub fn load_result(run_dir: &Path) -> Result<RunResult, PipelineError> {
    read_json(&run_dir.join(RESULT_FILE))
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, PipelineError> {
    let mut manifest: RunManifest = read_json(&run_dir.join(MANIFEST_FILE))?;
    manifest.config.base_dir = manifest.config_dir.clone();
    Ok(manifest)
}
