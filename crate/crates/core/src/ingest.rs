//! Corpus loading: plain-text documents, CSV record batches and ground-truth files.
//!
//! Loading never transforms content. Text is taken byte-for-byte from disk
//! once it has been checked to be valid UTF-8.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tasks::hta::{HtaRecord, HTA_FIELDS};
use crate::tasks::kickstarter::NaicsCode;
use crate::tasks::seedlist::{parse_species_name, SpeciesName};

pub const DEFAULT_LANGUAGE: &str = "en";

/// Columns every Kickstarter record batch must carry.
pub const KICKSTARTER_COLUMNS: [&str; 4] = ["name", "blurb", "category", "subcategory"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileMissing(PathBuf),
    #[error("{path}: invalid UTF-8 at byte {offset}")]
    EncodingError { path: PathBuf, offset: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("ragged row at line {line}: expected {expected} cells, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("ground truth parse error: {0}")]
    ParseError(String),
    #[error("ground truth declared as {declared} but content looks like {found}")]
    KindMismatch {
        declared: GroundTruthKind,
        found: GroundTruthKind,
    },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("ground truth key {0:?} does not refer to a known document or record")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    #[default]
    DigitalText,
    OcrText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: String,
    pub text: String,
    pub language: String,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SourceDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        SourceDocument {
            id: id.into(),
            text: text.into(),
            language: DEFAULT_LANGUAGE.to_string(),
            origin: Origin::DigitalText,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    fn check(&self) -> Result<(), IngestError> {
        if self.id.is_empty() {
            return Err(IngestError::InvalidDocument("empty document id".into()));
        }
        if self.language.is_empty() {
            return Err(IngestError::InvalidDocument(format!(
                "document {:?} has an empty language tag",
                self.id
            )));
        }
        Ok(())
    }
}

/// An ordered set of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Corpus {
    documents: Vec<SourceDocument>,
}

impl Corpus {
    pub fn new(documents: Vec<SourceDocument>) -> Result<Self, IngestError> {
        let mut seen = BTreeSet::new();
        for doc in &documents {
            doc.check()?;
            if !seen.insert(doc.id.as_str()) {
                return Err(IngestError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[SourceDocument] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&SourceDocument> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::FileMissing(path.to_path_buf())
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn read_utf8(path: &Path) -> Result<String, IngestError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| IngestError::EncodingError {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Loads one UTF-8 text file as a document. `language` defaults to "en".
pub fn load_text_document(
    path: impl AsRef<Path>,
    id: impl Into<String>,
    language: Option<&str>,
    origin: Origin,
) -> Result<SourceDocument, IngestError> {
    let path = path.as_ref();
    let text = read_utf8(path)?;
    let doc = SourceDocument {
        id: id.into(),
        text,
        language: language.unwrap_or(DEFAULT_LANGUAGE).to_string(),
        origin,
        metadata: BTreeMap::new(),
    };
    doc.check()?;
    Ok(doc)
}

/// Optional `corpus.json` entry describing one document of a corpus directory.
#[derive(Debug, Clone, Deserialize)]
struct ManifestEntry {
    id: String,
    path: PathBuf,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    origin: Origin,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Loads a corpus directory.
///
/// When the directory holds a `corpus.json` listing `{id, path, language,
/// origin, metadata}` entries, that listing is authoritative. Otherwise every
/// `*.txt` file is loaded in file-name order with its stem as the id.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<Corpus, IngestError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(IngestError::FileMissing(dir.to_path_buf()));
    }
    let listing = dir.join("corpus.json");
    let mut documents = Vec::new();
    if listing.is_file() {
        let raw = read_utf8(&listing)?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&raw)
            .map_err(|e| IngestError::ParseError(format!("{}: {e}", listing.display())))?;
        for entry in entries {
            let mut doc = load_text_document(
                dir.join(&entry.path),
                entry.id,
                entry.language.as_deref(),
                entry.origin,
            )?;
            doc.metadata = entry.metadata;
            documents.push(doc);
        }
    } else {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|source| IngestError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            documents.push(load_text_document(&path, stem, None, Origin::DigitalText)?);
        }
    }
    Corpus::new(documents)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordBatch {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub source: PathBuf,
}

impl RecordBatch {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&str> {
        let idx = self.column_index(column)?;
        self.rows.get(row).map(|r| r[idx].as_str())
    }

    /// Serializes the batch back to CSV, header included.
    pub fn to_csv_string(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(&self.columns)
            .expect("in-memory CSV write");
        for row in &self.rows {
            writer.write_record(row).expect("in-memory CSV write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory CSV flush"))
            .expect("CSV writer emits UTF-8 for UTF-8 input")
    }

    /// Renders the batch as one document of CSV rows (no header), keeping the
    /// given columns in order. Row ids come from an `id` column when present,
    /// otherwise from the 1-based row number. The id column is always first.
    pub fn to_document(&self, doc_id: &str, columns: &[&str]) -> Result<SourceDocument, IngestError> {
        let indices = columns
            .iter()
            .map(|c| {
                self.column_index(c)
                    .ok_or_else(|| IngestError::MissingColumn(c.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let id_col = self.column_index("id");
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for (n, row) in self.rows.iter().enumerate() {
            let id = id_col.map(|i| row[i].clone()).unwrap_or_else(|| (n + 1).to_string());
            let mut out = vec![id];
            out.extend(indices.iter().map(|&i| row[i].clone()));
            writer
                .write_record(&out)
                .map_err(|e| IngestError::Csv(e.to_string()))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| IngestError::Csv(e.to_string()))?;
        let text = String::from_utf8(bytes).expect("UTF-8 cells produce UTF-8 CSV");
        Ok(SourceDocument::new(doc_id, text))
    }
}

/// Loads a comma-separated file with a header row, checking that every
/// required column exists and that each row has one cell per column.
pub fn load_csv_records(
    path: impl AsRef<Path>,
    required_columns: &[&str],
) -> Result<RecordBatch, IngestError> {
    let path = path.as_ref();
    let text = read_utf8(path)?;
    let mut batch = parse_csv_records(&text, required_columns)?;
    batch.source = path.to_path_buf();
    Ok(batch)
}

pub fn parse_csv_records(text: &str, required_columns: &[&str]) -> Result<RecordBatch, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    for required in required_columns {
        if !columns.iter().any(|c| c == required) {
            return Err(IngestError::MissingColumn(required.to_string()));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        if record.len() != columns.len() {
            return Err(IngestError::RaggedRow {
                line: record.position().map(|p| p.line()).unwrap_or(0),
                expected: columns.len(),
                found: record.len(),
            });
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(RecordBatch {
        columns,
        rows,
        source: PathBuf::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruthKind {
    SpeciesSet,
    HtaRecord,
    NaicsLabel,
}

impl std::fmt::Display for GroundTruthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GroundTruthKind::SpeciesSet => "species-set",
            GroundTruthKind::HtaRecord => "hta-record",
            GroundTruthKind::NaicsLabel => "naics-label",
        })
    }
}

impl std::str::FromStr for GroundTruthKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "species-set" => Ok(GroundTruthKind::SpeciesSet),
            "hta-record" => Ok(GroundTruthKind::HtaRecord),
            "naics-label" => Ok(GroundTruthKind::NaicsLabel),
            other => Err(format!("unknown ground truth kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    SpeciesSet(BTreeMap<String, Vec<SpeciesName>>),
    HtaRecord(BTreeMap<String, HtaRecord>),
    NaicsLabel(BTreeMap<String, NaicsCode>),
}

impl GroundTruth {
    pub fn kind(&self) -> GroundTruthKind {
        match self {
            GroundTruth::SpeciesSet(_) => GroundTruthKind::SpeciesSet,
            GroundTruth::HtaRecord(_) => GroundTruthKind::HtaRecord,
            GroundTruth::NaicsLabel(_) => GroundTruthKind::NaicsLabel,
        }
    }

    pub fn keys(&self) -> Vec<&str> {
        match self {
            GroundTruth::SpeciesSet(m) => m.keys().map(String::as_str).collect(),
            GroundTruth::HtaRecord(m) => m.keys().map(String::as_str).collect(),
            GroundTruth::NaicsLabel(m) => m.keys().map(String::as_str).collect(),
        }
    }

    /// Every key must name a known document or record.
    pub fn check_keys<'a>(&self, known: impl IntoIterator<Item = &'a str>) -> Result<(), IngestError> {
        let known: BTreeSet<&str> = known.into_iter().collect();
        match self.keys().into_iter().find(|k| !known.contains(k)) {
            Some(k) => Err(IngestError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }
}

fn sniff_kind(map: &serde_json::Map<String, Value>) -> Option<GroundTruthKind> {
    let first = map.values().next()?;
    Some(match first {
        Value::Array(_) => GroundTruthKind::SpeciesSet,
        Value::Object(_) => GroundTruthKind::HtaRecord,
        _ => GroundTruthKind::NaicsLabel,
    })
}

pub fn load_ground_truth(path: impl AsRef<Path>, kind: GroundTruthKind) -> Result<GroundTruth, IngestError> {
    let path = path.as_ref();
    parse_ground_truth(&read_utf8(path)?, kind)
}

pub fn parse_ground_truth(text: &str, kind: GroundTruthKind) -> Result<GroundTruth, IngestError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| IngestError::ParseError(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(IngestError::ParseError("top level must be a JSON object".into()));
    };
    if let Some(found) = sniff_kind(&map) {
        if found != kind {
            return Err(IngestError::KindMismatch { declared: kind, found });
        }
    }
    match kind {
        GroundTruthKind::SpeciesSet => {
            let mut out = BTreeMap::new();
            for (doc_id, names) in map {
                let Value::Array(items) = names else {
                    return Err(IngestError::ParseError(format!("{doc_id}: expected a list of names")));
                };
                let mut parsed = Vec::with_capacity(items.len());
                for item in items {
                    let Value::String(s) = item else {
                        return Err(IngestError::ParseError(format!("{doc_id}: names must be strings")));
                    };
                    parsed.push(
                        parse_species_name(&s)
                            .map_err(|e| IngestError::ParseError(format!("{doc_id}: {e}")))?,
                    );
                }
                out.insert(doc_id, parsed);
            }
            Ok(GroundTruth::SpeciesSet(out))
        }
        GroundTruthKind::NaicsLabel => {
            let mut out = BTreeMap::new();
            for (record_id, code) in map {
                let Value::String(s) = code else {
                    return Err(IngestError::ParseError(format!("{record_id}: code must be a string")));
                };
                let code = NaicsCode::parse(&s)
                    .map_err(|e| IngestError::ParseError(format!("{record_id}: {e}")))?;
                out.insert(record_id, code);
            }
            Ok(GroundTruth::NaicsLabel(out))
        }
        GroundTruthKind::HtaRecord => {
            let mut out = BTreeMap::new();
            for (doc_id, fields) in map {
                let Value::Object(fields) = fields else {
                    return Err(IngestError::ParseError(format!("{doc_id}: expected an object")));
                };
                if fields.len() != HTA_FIELDS.len() {
                    return Err(IngestError::ParseError(format!(
                        "{doc_id}: expected {} fields, found {}",
                        HTA_FIELDS.len(),
                        fields.len()
                    )));
                }
                let record: HtaRecord = serde_json::from_value(Value::Object(fields))
                    .map_err(|e| IngestError::ParseError(format!("{doc_id}: {e}")))?;
                out.insert(doc_id, record);
            }
            Ok(GroundTruth::HtaRecord(out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn loads_text_verbatim() {
        let f = write_tmp(b"Cistus crispus L.");
        let doc = load_text_document(f.path(), "page", None, Origin::OcrText).unwrap();
        assert_eq!(doc.text, "Cistus crispus L.");
        assert_eq!(doc.language, "en");
        assert_eq!(doc.origin, Origin::OcrText);
    }

    #[test]
    fn empty_file_gives_empty_text() {
        let f = write_tmp(b"");
        let doc = load_text_document(f.path(), "empty", Some("fr"), Origin::DigitalText).unwrap();
        assert_eq!(doc.text, "");
        assert_eq!(doc.language, "fr");
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let f = write_tmp(b"Cistus \xFF crispus");
        let err = load_text_document(f.path(), "bad", None, Origin::DigitalText).unwrap_err();
        assert!(matches!(err, IngestError::EncodingError { offset: 7, .. }), "{err:?}");
    }

    #[test]
    fn missing_file() {
        let err = load_text_document("/nonexistent/page.txt", "x", None, Origin::DigitalText)
            .unwrap_err();
        assert!(matches!(err, IngestError::FileMissing(_)));
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let docs = vec![SourceDocument::new("a", "x"), SourceDocument::new("a", "y")];
        assert!(matches!(Corpus::new(docs), Err(IngestError::DuplicateId(id)) if id == "a"));
        assert!(Corpus::new(vec![SourceDocument::new("", "x")]).is_err());
    }

    #[test]
    fn csv_batch_loads_rows_in_order() {
        let f = write_tmp(
            b"name,blurb,category,subcategory\nInspired,An album,Music,Jazz\n\"Poetry, together\",A book,Publishing,Poetry\n",
        );
        let batch = load_csv_records(f.path(), &KICKSTARTER_COLUMNS).unwrap();
        assert_eq!(batch.rows.len(), 2);
        assert_eq!(batch.cell(1, "name"), Some("Poetry, together"));
        assert_eq!(batch.source, f.path());
    }

    #[test]
    fn csv_missing_column() {
        let err = parse_csv_records("name,category,subcategory\na,b,c\n", &KICKSTARTER_COLUMNS)
            .unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(c) if c == "blurb"));
    }

    #[test]
    fn csv_ragged_row() {
        let err = parse_csv_records(
            "name,blurb,category,subcategory\na,b,c,d\na,b,c\n",
            &KICKSTARTER_COLUMNS,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::RaggedRow { line: 3, expected: 4, found: 3 }), "{err:?}");
    }

    #[test]
    fn batch_to_document_puts_id_first() {
        let batch = parse_csv_records(
            "id,name,blurb,category,subcategory\n17,Inspired,\"An album, with friends\",Music,Jazz\n",
            &KICKSTARTER_COLUMNS,
        )
        .unwrap();
        let doc = batch.to_document("batch", &KICKSTARTER_COLUMNS).unwrap();
        assert_eq!(doc.text, "17,Inspired,\"An album, with friends\",Music,Jazz\n");
    }

    #[test]
    fn naics_ground_truth() {
        let gt = parse_ground_truth(r#"{"p1": "7111"}"#, GroundTruthKind::NaicsLabel).unwrap();
        let GroundTruth::NaicsLabel(m) = &gt else { panic!() };
        assert_eq!(m["p1"].as_str(), "7111");
        assert!(gt.check_keys(["p1", "p2"]).is_ok());
        assert!(matches!(gt.check_keys(["p2"]), Err(IngestError::UnknownKey(_))));
        assert!(parse_ground_truth(r#"{"p1": "71"}"#, GroundTruthKind::NaicsLabel).is_err());
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let err = parse_ground_truth(r#"{"p1": "7111"}"#, GroundTruthKind::SpeciesSet).unwrap_err();
        assert!(matches!(
            err,
            IngestError::KindMismatch { declared: GroundTruthKind::SpeciesSet, found: GroundTruthKind::NaicsLabel }
        ));
    }

    #[test]
    fn hta_ground_truth_needs_all_fields() {
        let mut fields = serde_json::Map::new();
        for f in HTA_FIELDS.iter().take(13) {
            fields.insert(f.to_string(), Value::Null);
        }
        let doc = serde_json::json!({ "nice": Value::Object(fields.clone()) });
        let err = parse_ground_truth(&doc.to_string(), GroundTruthKind::HtaRecord).unwrap_err();
        assert!(matches!(err, IngestError::ParseError(_)));

        fields.insert(HTA_FIELDS[13].to_string(), Value::String("None".into()));
        let doc = serde_json::json!({ "nice": Value::Object(fields) });
        assert!(parse_ground_truth(&doc.to_string(), GroundTruthKind::HtaRecord).is_ok());
    }
}
