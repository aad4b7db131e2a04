//! Token estimation and boundary-aware chunk planning.
//!
//! A document is cut into boundary-delimited units (lines, blank-line
//! separated paragraphs, or CSV rows) and units are packed greedily into
//! chunks. Chunks never overlap and their concatenation is the original text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SourceDocument;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChunkError {
    #[error("a single unit of document {doc_id:?} at char {position} exceeds the input budget ({tokens} > {budget} tokens)")]
    OversizedUnit {
        doc_id: String,
        position: usize,
        tokens: u64,
        budget: u64,
    },
    #[error("output budget exceeded: needs {needed} tokens, {allowed} allowed")]
    OutputBudgetExceeded { needed: u64, allowed: u64 },
    #[error("invalid chunking configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenEstimatorConfig {
    pub chars_per_token: f64,
    pub safety_margin: f64,
}

impl Default for TokenEstimatorConfig {
    fn default() -> Self {
        TokenEstimatorConfig {
            chars_per_token: 4.0,
            safety_margin: 0.10,
        }
    }
}

impl TokenEstimatorConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if !(self.chars_per_token.is_finite() && self.chars_per_token > 0.0) {
            return Err(ChunkError::InvalidConfig(format!(
                "chars_per_token must be positive, got {}",
                self.chars_per_token
            )));
        }
        if !(0.0..1.0).contains(&self.safety_margin) {
            return Err(ChunkError::InvalidConfig(format!(
                "safety_margin must lie in [0, 1), got {}",
                self.safety_margin
            )));
        }
        Ok(())
    }

    fn tokens_for_chars(&self, chars: usize) -> u64 {
        (chars as f64 / self.chars_per_token).ceil() as u64
    }
}

/// `ceil(char_count / chars_per_token)`, counting Unicode scalar values.
pub fn estimate_tokens(text: &str, config: &TokenEstimatorConfig) -> u64 {
    config.tokens_for_chars(text.chars().count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_input_tokens: u64,
    pub max_output_tokens: u64,
    /// Reserved for the instruction part of the prompt template.
    pub instruction_tokens: u64,
    pub per_record_output_tokens: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_input_tokens: 200_000,
            max_output_tokens: 4096,
            instruction_tokens: 1000,
            per_record_output_tokens: 50,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), ChunkError> {
        let bad = |m: &str| Err(ChunkError::InvalidConfig(m.to_string()));
        if self.max_input_tokens == 0 {
            return bad("max_input_tokens must be positive");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if self.per_record_output_tokens == 0 {
            return bad("per_record_output_tokens must be positive");
        }
        if self.instruction_tokens >= self.max_input_tokens {
            return bad("instruction_tokens must be smaller than max_input_tokens");
        }
        Ok(())
    }

    /// `(max_input_tokens - instruction_tokens) * (1 - safety_margin)`, floored.
    pub fn effective_input_budget(&self, estimator: &TokenEstimatorConfig) -> u64 {
        let room = self.max_input_tokens.saturating_sub(self.instruction_tokens) as f64;
        (room * (1.0 - estimator.safety_margin)).floor() as u64
    }

    /// Largest record count whose expected output still fits.
    pub fn max_records(&self) -> u64 {
        self.max_output_tokens / self.per_record_output_tokens.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Line,
    BlankLine,
    CsvRow,
}

impl std::str::FromStr for Boundary {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line" => Ok(Boundary::Line),
            "blank-line" => Ok(Boundary::BlankLine),
            "csv-row" => Ok(Boundary::CsvRow),
            other => Err(format!("unknown boundary {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    #[serde(skip)]
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub estimated_tokens: u64,
    pub record_count_estimate: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub doc_id: String,
    pub chunks: Vec<Chunk>,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn reassemble(&self) -> String {
        self.chunks.iter().map(|c| c.text.as_str()).collect()
    }
}

/// A boundary-delimited slice of the document, in byte offsets.
#[derive(Debug, Clone, Copy)]
struct Unit {
    start: usize,
    end: usize,
    chars: usize,
    records: u64,
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

fn line_spans(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |line| {
        let start = offset;
        offset += line.len();
        (start, line)
    })
}

/// Byte ranges of the units; together they tile the text.
fn unit_spans(text: &str, boundary: Boundary) -> Vec<(usize, usize)> {
    match boundary {
        Boundary::Line => line_spans(text).map(|(s, l)| (s, s + l.len())).collect(),
        Boundary::BlankLine => {
            // A unit is a run of content lines plus the blank lines after it.
            let mut spans: Vec<(usize, usize)> = Vec::new();
            let mut seen_blank = false;
            for (start, line) in line_spans(text) {
                let end = start + line.len();
                let blank = is_blank(line);
                match spans.last_mut() {
                    Some(last) if blank || !seen_blank => last.1 = end,
                    _ => spans.push((start, end)),
                }
                seen_blank = blank;
            }
            spans
        }
        Boundary::CsvRow => {
            let mut spans = Vec::new();
            let mut start = 0;
            let mut in_quotes = false;
            for (i, b) in text.bytes().enumerate() {
                match b {
                    b'"' => in_quotes = !in_quotes,
                    b'\n' if !in_quotes => {
                        spans.push((start, i + 1));
                        start = i + 1;
                    }
                    _ => {}
                }
            }
            if start < text.len() {
                spans.push((start, text.len()));
            }
            spans
        }
    }
}

fn record_count(unit: &str, boundary: Boundary) -> u64 {
    match boundary {
        Boundary::Line | Boundary::BlankLine => unit.lines().filter(|l| !is_blank(l)).count() as u64,
        Boundary::CsvRow => u64::from(!is_blank(unit)),
    }
}

/// Splits a document into chunks that fit the effective input budget.
///
/// Units are packed greedily. A chunk is closed when the next unit would push
/// it over the input budget or over the number of records whose expected
/// output fits `max_output_tokens`. A single unit over the input budget is an
/// error; a single unit over the output budget becomes its own chunk and is
/// caught later by [`check_output_budget`].
pub fn plan_chunks(
    document: &SourceDocument,
    budget: &Budget,
    estimator: &TokenEstimatorConfig,
    boundary: Boundary,
) -> Result<ChunkPlan, ChunkError> {
    budget.validate()?;
    estimator.validate()?;
    let limit = budget.effective_input_budget(estimator);
    let max_records = budget.max_records();
    let text = document.text.as_str();

    let mut char_pos = 0;
    let units: Vec<Unit> = unit_spans(text, boundary)
        .into_iter()
        .map(|(start, end)| {
            let slice = &text[start..end];
            let chars = slice.chars().count();
            let unit = Unit {
                start,
                end,
                chars,
                records: record_count(slice, boundary),
            };
            if estimator.tokens_for_chars(chars) > limit {
                return Err(ChunkError::OversizedUnit {
                    doc_id: document.id.clone(),
                    position: char_pos,
                    tokens: estimator.tokens_for_chars(chars),
                    budget: limit,
                });
            }
            char_pos += chars;
            Ok(unit)
        })
        .collect::<Result<_, _>>()?;

    let mut chunks: Vec<Chunk> = Vec::new();
    let mut char_start = 0;
    let mut i = 0;
    while i < units.len() {
        let first = units[i];
        let (mut chars, mut records, mut end) = (first.chars, first.records, first.end);
        let mut j = i + 1;
        while j < units.len() {
            let next = units[j];
            let fits_input = estimator.tokens_for_chars(chars + next.chars) <= limit;
            let fits_output = records + next.records <= max_records;
            if !(fits_input && fits_output) {
                break;
            }
            chars += next.chars;
            records += next.records;
            end = next.end;
            j += 1;
        }
        let slice = &text[first.start..end];
        chunks.push(Chunk {
            doc_id: document.id.clone(),
            index: chunks.len(),
            text: slice.to_string(),
            char_start,
            char_end: char_start + chars,
            estimated_tokens: estimator.tokens_for_chars(chars),
            record_count_estimate: records,
        });
        char_start += chars;
        i = j;
    }
    Ok(ChunkPlan {
        doc_id: document.id.clone(),
        chunks,
    })
}

/// Checks that the chunk's expected output fits `max_output_tokens`.
pub fn check_output_budget(chunk: &Chunk, budget: &Budget) -> Result<(), ChunkError> {
    let needed = chunk
        .record_count_estimate
        .saturating_mul(budget.per_record_output_tokens);
    if needed <= budget.max_output_tokens {
        Ok(())
    } else {
        Err(ChunkError::OutputBudgetExceeded {
            needed,
            allowed: budget.max_output_tokens,
        })
    }
}
