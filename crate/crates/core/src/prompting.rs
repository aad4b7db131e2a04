//! Prompt templates with named placeholders.
//!
//! Placeholders are written `{name}`; `{{` and `}}` produce literal braces.
//! Only the names in [`KNOWN_PLACEHOLDERS`] are recognised.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tasks::hta::HtaRecord;

pub const KNOWN_PLACEHOLDERS: [&str; 4] = ["data", "schema", "target_language", "fields"];

pub const SEEDLIST_TEMPLATE: &str = include_str!("../templates/seedlist.txt");
pub const HTA_TEMPLATE: &str = include_str!("../templates/hta.txt");
pub const HTA_TRANSLATE_TEMPLATE: &str = include_str!("../templates/hta_translate.txt");
pub const KICKSTARTER_TEMPLATE: &str = include_str!("../templates/kickstarter.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("placeholder {{{name}}} must occur exactly once, found {count}")]
    PlaceholderCount { name: String, count: usize },
    #[error("template syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

fn parse_body(body: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < body.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                literal.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                literal.push('}');
                i += 2;
            }
            b'{' => {
                let close = body[i + 1..].find('}').map(|off| i + 1 + off).ok_or_else(|| {
                    PromptError::Syntax {
                        position: i,
                        message: "unclosed '{'".into(),
                    }
                })?;
                let name = &body[i + 1..close];
                if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                    return Err(PromptError::Syntax {
                        position: i,
                        message: format!("invalid placeholder name {name:?}; use {{{{ for a literal brace"),
                    });
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(name.to_string()));
                i = close + 1;
            }
            b'}' => {
                return Err(PromptError::Syntax {
                    position: i,
                    message: "unmatched '}'; use }} for a literal brace".into(),
                })
            }
            _ => {
                let ch = body[i..].chars().next().expect("in bounds");
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    required: BTreeSet<String>,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new<I, S>(name: impl Into<String>, body: impl Into<String>, required: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let body = body.into();
        let segments = parse_body(&body)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seg in &segments {
            if let Segment::Placeholder(p) = seg {
                if !KNOWN_PLACEHOLDERS.contains(&p.as_str()) {
                    return Err(PromptError::UnknownPlaceholder(p.clone()));
                }
                *counts.entry(p).or_default() += 1;
            }
        }
        let required: BTreeSet<String> = required.into_iter().map(Into::into).collect();
        for r in &required {
            let count = counts.get(r.as_str()).copied().unwrap_or(0);
            if count != 1 {
                return Err(PromptError::PlaceholderCount {
                    name: r.clone(),
                    count,
                });
            }
        }
        Ok(PromptTemplate {
            name: name.into(),
            body,
            required,
            segments,
        })
    }

    pub fn from_file<I, S>(path: impl AsRef<Path>, required: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, body, required)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Lowercase hex SHA-256 of the template body.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    /// The template with every placeholder bound to the empty string: the
    /// fixed instruction text a prompt always carries.
    pub fn instruction_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(l) => l.as_str(),
                Segment::Placeholder(_) => "",
            })
            .collect()
    }

    pub fn render(&self, bindings: &Bindings) -> Result<String, PromptError> {
        if let Some(unknown) = bindings.keys().find(|k| !KNOWN_PLACEHOLDERS.contains(&k.as_str())) {
            return Err(PromptError::UnknownPlaceholder(unknown.clone()));
        }
        for r in &self.required {
            if !bindings.contains_key(r) {
                return Err(PromptError::MissingBinding(r.clone()));
            }
        }
        let mut out = String::with_capacity(self.body.len() + bindings.values().map(String::len).sum::<usize>());
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Placeholder(p) => match bindings.get(p) {
                    Some(v) => out.push_str(v),
                    None => return Err(PromptError::MissingBinding(p.clone())),
                },
            }
        }
        Ok(out)
    }
}

/// Free-text HTA fields that may come back untranslated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldPolicy {
    pub fields: Vec<String>,
}

impl Default for FieldPolicy {
    fn default() -> Self {
        FieldPolicy {
            fields: [
                "indication",
                "final_recommendation",
                "comparator",
                "relative_effectiveness_outcome",
                "cost_effectiveness_outcome",
                "budget_impact_outcome",
                "managed_entry_agreements",
                "clinical_restrictions",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationBindings {
    /// Fields to translate with their current values, in policy order.
    pub fields: Vec<(String, String)>,
    pub target_language: String,
}

impl TranslationBindings {
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// `{fields}` is bound to a JSON object of the selected values.
    pub fn to_bindings(&self) -> Bindings {
        let object: serde_json::Map<String, serde_json::Value> = self
            .fields
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        let mut b = Bindings::new();
        b.insert(
            "fields".into(),
            serde_json::to_string_pretty(&object).expect("string map serializes"),
        );
        b.insert("target_language".into(), self.target_language.clone());
        b
    }
}

/// Selects the fields of a record that need a translation pass.
///
/// English documents select nothing. For any other language, every policy
/// field holding a value is selected; null fields have nothing to translate.
pub fn translation_bindings(record: &HtaRecord, doc_language: &str, policy: &FieldPolicy) -> TranslationBindings {
    let target_language = "en".to_string();
    if !crate::tasks::hta::needs_translation_pass(doc_language) {
        return TranslationBindings {
            fields: Vec::new(),
            target_language,
        };
    }
    let fields = policy
        .fields
        .iter()
        .filter_map(|f| record.get(f).flatten().map(|v| (f.clone(), v.to_string())))
        .collect();
    TranslationBindings {
        fields,
        target_language,
    }
}
