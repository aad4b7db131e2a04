//! Shared helpers for the integration tests: fixture paths and a
//! deterministic stand-in model used to record seed-list cassettes.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rdproc::pipeline::{AdapterMode, PipelineConfig};
use rdproc::provider::{CompletionAdapter, ModelRequest, ModelResponse, ProviderError, StopReason};
use rdproc::tasks::seedlist::{parse_species_name, species_to_record};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    let path = fixture(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Set to regenerate checked-in cassettes and golden files.
pub fn updating() -> bool {
    std::env::var_os("UPDATE_FIXTURES").is_some()
}

/// Rough subword count: every run of letters and digits costs one token per
/// four characters (rounded up), every other visible character one token.
/// Independent of the pipeline's character-based estimate.
pub fn crude_token_count(text: &str) -> u64 {
    let mut tokens = 0u64;
    let mut run = 0u64;
    for c in text.chars() {
        if c.is_alphanumeric() {
            run += 1;
            continue;
        }
        tokens += run.div_ceil(4);
        run = 0;
        if !c.is_whitespace() {
            tokens += 1;
        }
    }
    tokens + run.div_ceil(4)
}

/// The text between the `<<<` and `>>>` fences of a rendered prompt.
pub fn data_block(prompt: &str) -> &str {
    let start = prompt.find("<<<\n").map_or(0, |i| i + 4);
    let end = prompt[start..].rfind("\n>>>").map_or(prompt.len(), |i| start + i);
    &prompt[start..end]
}

/// Reads each line of the page as a species name, skipping blank lines and
/// all-caps family headings, and answers with a fenced JSON array.
pub struct SeedlistModel;

impl SeedlistModel {
    pub fn answer(prompt: &str) -> String {
        let records: Vec<_> = data_block(prompt)
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && l.chars().any(char::is_lowercase))
            .map(|l| species_to_record(&parse_species_name(l).unwrap_or_else(|e| panic!("{l:?}: {e}"))))
            .collect();
        format!(
            "Here are the species names:\n```json\n{}\n```",
            serde_json::to_string_pretty(&records).unwrap()
        )
    }
}

impl CompletionAdapter for SeedlistModel {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let text = Self::answer(&request.prompt);
        Ok(ModelResponse {
            input_tokens: crude_token_count(&request.prompt),
            output_tokens: crude_token_count(&text),
            text,
            stop_reason: StopReason::Complete,
        })
    }
}

/// The checked-in config for the page corpus, in the given mode.
pub fn pages_config(mode: AdapterMode) -> PipelineConfig {
    let mut config = PipelineConfig::load(fixture("seedlist/pages.toml")).unwrap();
    config.mode = mode;
    config
}

/// One recorded HTA run: the extraction answer and the answer to the
/// translation prompt.
#[derive(Debug, Clone, serde::Deserialize)]
pub struct HtaScript {
    pub extraction: serde_json::Value,
    pub translation: serde_json::Value,
}

impl CompletionAdapter for HtaScript {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let answer = if request.prompt.contains("Translate every value") {
            &self.translation
        } else {
            &self.extraction
        };
        let text = format!("```json\n{}\n```", serde_json::to_string_pretty(answer).unwrap());
        Ok(ModelResponse {
            input_tokens: crude_token_count(&request.prompt),
            output_tokens: crude_token_count(&text),
            text,
            stop_reason: StopReason::Complete,
        })
    }
}

pub fn hta_scripts() -> Vec<HtaScript> {
    serde_json::from_str(&read_fixture("hta/zin_runs.json")).unwrap()
}

/// Runs the HTA task over the fixture corpus once per recorded script.
pub fn hta_runs() -> Vec<rdproc::pipeline::RunResult> {
    let corpus = rdproc::pipeline::load_corpus(fixture("hta/corpus")).unwrap();
    let config = PipelineConfig::default();
    let task = rdproc::pipeline::task_from_config("hta", &config).unwrap();
    hta_scripts()
        .iter()
        .map(|script| rdproc::pipeline::run_task(&corpus, task.as_ref(), script, &config).unwrap().0)
        .collect()
}
