//! Task plugins and the interface the pipeline drives them through.

pub mod hta;
pub mod kickstarter;
pub mod seedlist;

use serde_json::Value;

use crate::chunker::{Boundary, Chunk};
use crate::extraction::{FieldKind, Record, TaskSchema};
use crate::ingest::SourceDocument;
use crate::prompting::{Bindings, FieldPolicy, PromptTemplate};

pub const TASK_NAMES: [&str; 3] = [seedlist::TASK_NAME, hta::TASK_NAME, kickstarter::TASK_NAME];

/// A task plugin. Implementations hold no per-run state and may be called
/// from several workers at once.
pub trait Task: Send + Sync {
    fn name(&self) -> &str;
    fn schema(&self) -> &TaskSchema;
    fn template(&self) -> &PromptTemplate;
    fn default_boundary(&self) -> Boundary;

    fn bindings(&self, chunk: &Chunk, _doc: &SourceDocument) -> Bindings {
        let mut b = Bindings::new();
        b.insert("data".into(), chunk.text.clone());
        b.insert("schema".into(), schema_prompt_text(self.schema()));
        b
    }

    /// Checks and normalizes one validated record. Returns flags to attach
    /// to it; an error fails the whole chunk as malformed output.
    fn finalize_record(&self, _record: &mut Record, _doc: &SourceDocument) -> Result<Vec<String>, String> {
        Ok(Vec::new())
    }

    /// Template for an optional second prompt run per record.
    fn follow_up_template(&self) -> Option<&PromptTemplate> {
        None
    }

    /// Bindings for the second prompt, or `None` when the record needs none.
    fn follow_up_bindings(&self, _record: &Record, _doc: &SourceDocument) -> Option<Bindings> {
        None
    }

    /// Merges the parsed answer to the second prompt into the record.
    fn apply_follow_up(&self, _record: &mut Record, _answer: &Value) -> Result<(), String> {
        Ok(())
    }
}

/// The field list shown to the model: a JSON object mapping each key to
/// its expected kind.
pub fn schema_prompt_text(schema: &TaskSchema) -> String {
    let object: indexmap::IndexMap<&str, &str> = schema
        .fields
        .iter()
        .map(|f| {
            let kind = match f.kind {
                FieldKind::String => "string",
                FieldKind::StringOrNull => "string or null",
            };
            (f.name.as_str(), kind)
        })
        .collect();
    serde_json::to_string_pretty(&object).expect("string map serializes")
}

#[derive(Debug, Clone, Default)]
pub struct TaskOptions {
    pub template: Option<PromptTemplate>,
    pub follow_up_template: Option<PromptTemplate>,
    pub field_policy: Option<FieldPolicy>,
    pub naics_table: Option<kickstarter::NaicsTable>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("unknown task {0:?} (known: seedlist, hta, kickstarter)")]
    UnknownTask(String),
}

pub fn build_task(name: &str, options: TaskOptions) -> Result<Box<dyn Task>, TaskError> {
    match name {
        seedlist::TASK_NAME => Ok(Box::new(seedlist::SeedlistTask::new(options.template))),
        hta::TASK_NAME => Ok(Box::new(hta::HtaTask::new(
            options.template,
            options.follow_up_template,
            options.field_policy.unwrap_or_default(),
        ))),
        kickstarter::TASK_NAME => Ok(Box::new(kickstarter::KickstarterTask::new(
            options.template,
            options.naics_table.unwrap_or_else(kickstarter::NaicsTable::shipped),
        ))),
        other => Err(TaskError::UnknownTask(other.to_string())),
    }
}
