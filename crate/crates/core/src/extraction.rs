//! Recovering JSON from model completions and checking it against a task schema.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// One validated output record. Keys follow the schema's field order.
pub type Record = IndexMap<String, Option<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no JSON object or array found in the completion")]
    NoJsonFound,
    #[error("malformed JSON starting at byte {position}: {message}")]
    MalformedJson { position: usize, message: String },
    #[error("{count} JSON candidates found (strict mode)")]
    MultipleCandidates { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractMode {
    /// The first candidate wins; later ones are logged.
    #[default]
    FirstWins,
    /// More than one candidate is an error.
    Strict,
}

/// Finds the byte index one past the bracket closing the one at `start`,
/// skipping over string contents. `None` if it never closes cleanly.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Scans for candidates starting at `from`. Returns the first one that
/// parses, with its span, plus the first parse failure seen before it.
fn find_candidate(raw: &str, from: usize) -> (Option<(Value, usize, usize)>, Option<ExtractError>) {
    let bytes = raw.as_bytes();
    let mut first_failure = None;
    for start in from..bytes.len() {
        if bytes[start] != b'{' && bytes[start] != b'[' {
            continue;
        }
        let Some(end) = balanced_end(bytes, start) else {
            first_failure.get_or_insert(ExtractError::MalformedJson {
                position: start,
                message: "unbalanced brackets".into(),
            });
            continue;
        };
        match serde_json::from_str::<Value>(&raw[start..end]) {
            Ok(v) => return (Some((v, start, end)), first_failure),
            Err(e) => {
                first_failure.get_or_insert(ExtractError::MalformedJson {
                    position: start,
                    message: e.to_string(),
                });
            }
        }
    }
    (None, first_failure)
}

pub fn extract_json_value(raw: &str) -> Result<Value, ExtractError> {
    extract_json_value_with(raw, ExtractMode::FirstWins)
}

pub fn extract_json_value_with(raw: &str, mode: ExtractMode) -> Result<Value, ExtractError> {
    let (found, failure) = find_candidate(raw, 0);
    let Some((value, start, end)) = found else {
        return Err(failure.unwrap_or(ExtractError::NoJsonFound));
    };
    let mut count = 1;
    let mut cursor = end;
    while let (Some((_, _, next_end)), _) = find_candidate(raw, cursor) {
        count += 1;
        cursor = next_end;
    }
    if count > 1 {
        if mode == ExtractMode::Strict {
            return Err(ExtractError::MultipleCandidates { count });
        }
        tracing::warn!(count, start, "several JSON values in completion; using the first");
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    ArrayOfObjects,
    SingleObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    String,
    StringOrNull,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    pub shape: Shape,
    pub fields: Vec<FieldSpec>,
    pub required: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("expected {expected:?}, found {found}")]
    ShapeMismatch { expected: Shape, found: String },
    #[error("record {index} is missing required field {name:?}")]
    MissingField { name: String, index: usize },
    #[error("record {index} has unknown field {name:?}")]
    UnknownField { name: String, index: usize },
    #[error("record {index}: field {name:?} has the wrong kind")]
    WrongKind { name: String, index: usize },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

impl TaskSchema {
    pub fn new(
        name: impl Into<String>,
        shape: Shape,
        fields: Vec<FieldSpec>,
        required: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, SchemaError> {
        let schema = TaskSchema {
            name: name.into(),
            shape,
            fields,
            required: required.into_iter().map(Into::into).collect(),
        };
        if let Some(r) = schema.required.iter().find(|r| schema.field(r).is_none()) {
            return Err(SchemaError::InvalidSchema(format!("required field {r:?} is not declared")));
        }
        Ok(schema)
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("schema serializes")
    }
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn validate_object(obj: &serde_json::Map<String, Value>, schema: &TaskSchema, index: usize) -> Result<Record, SchemaError> {
    if let Some(name) = obj.keys().find(|k| schema.field(k).is_none()) {
        return Err(SchemaError::UnknownField { name: name.clone(), index });
    }
    let mut record = Record::with_capacity(schema.fields.len());
    for spec in &schema.fields {
        let value = match (obj.get(&spec.name), spec.kind) {
            (None, _) if schema.required.contains(&spec.name) => {
                return Err(SchemaError::MissingField { name: spec.name.clone(), index })
            }
            (None, _) => None,
            (Some(Value::String(s)), _) => Some(s.clone()),
            (Some(Value::Null), FieldKind::StringOrNull) => None,
            (Some(_), _) => return Err(SchemaError::WrongKind { name: spec.name.clone(), index }),
        };
        record.insert(spec.name.clone(), value);
    }
    Ok(record)
}

/// Checks a parsed value against the schema and converts it to records.
/// Optional fields absent from the value come back as `None`.
pub fn validate_records(value: &Value, schema: &TaskSchema) -> Result<Vec<Record>, SchemaError> {
    match (schema.shape, value) {
        (Shape::ArrayOfObjects, Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| match item {
                Value::Object(obj) => validate_object(obj, schema, i),
                other => Err(SchemaError::ShapeMismatch {
                    expected: Shape::ArrayOfObjects,
                    found: format!("{} at index {i}", kind_name(other)),
                }),
            })
            .collect(),
        (Shape::SingleObject, Value::Object(obj)) => Ok(vec![validate_object(obj, schema, 0)?]),
        (expected, other) => Err(SchemaError::ShapeMismatch {
            expected,
            found: kind_name(other).into(),
        }),
    }
}
