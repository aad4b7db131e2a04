//! Data-point extraction from Health Technology Assessment documents.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chunker::Boundary;
use crate::extraction::{FieldKind, FieldSpec, Record, Shape, TaskSchema};
use crate::ingest::SourceDocument;
use crate::prompting::{translation_bindings, Bindings, FieldPolicy, PromptTemplate, HTA_TEMPLATE, HTA_TRANSLATE_TEMPLATE};

use super::Task;

pub const TASK_NAME: &str = "hta";

pub const HTA_FIELDS: [&str; 14] = [
    "hta_id",
    "assessment_type",
    "internal_identifier",
    "inn",
    "brand_name",
    "assessment_date",
    "indication",
    "final_recommendation",
    "comparator",
    "relative_effectiveness_outcome",
    "cost_effectiveness_outcome",
    "budget_impact_outcome",
    "managed_entry_agreements",
    "clinical_restrictions",
];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HtaRecord {
    pub hta_id: Option<String>,
    pub assessment_type: Option<String>,
    pub internal_identifier: Option<String>,
    pub inn: Option<String>,
    pub brand_name: Option<String>,
    pub assessment_date: Option<String>,
    pub indication: Option<String>,
    pub final_recommendation: Option<String>,
    pub comparator: Option<String>,
    pub relative_effectiveness_outcome: Option<String>,
    pub cost_effectiveness_outcome: Option<String>,
    pub budget_impact_outcome: Option<String>,
    pub managed_entry_agreements: Option<String>,
    pub clinical_restrictions: Option<String>,
}

impl HtaRecord {
    fn slot(&self, field: &str) -> Option<&Option<String>> {
        Some(match field {
            "hta_id" => &self.hta_id,
            "assessment_type" => &self.assessment_type,
            "internal_identifier" => &self.internal_identifier,
            "inn" => &self.inn,
            "brand_name" => &self.brand_name,
            "assessment_date" => &self.assessment_date,
            "indication" => &self.indication,
            "final_recommendation" => &self.final_recommendation,
            "comparator" => &self.comparator,
            "relative_effectiveness_outcome" => &self.relative_effectiveness_outcome,
            "cost_effectiveness_outcome" => &self.cost_effectiveness_outcome,
            "budget_impact_outcome" => &self.budget_impact_outcome,
            "managed_entry_agreements" => &self.managed_entry_agreements,
            "clinical_restrictions" => &self.clinical_restrictions,
            _ => return None,
        })
    }

    /// `None` for an unknown field name, `Some(None)` for a null value.
    pub fn get(&self, field: &str) -> Option<Option<&str>> {
        self.slot(field).map(Option::as_deref)
    }

    pub fn set(&mut self, field: &str, value: Option<String>) -> Result<(), String> {
        let slot = match field {
            "hta_id" => &mut self.hta_id,
            "assessment_type" => &mut self.assessment_type,
            "internal_identifier" => &mut self.internal_identifier,
            "inn" => &mut self.inn,
            "brand_name" => &mut self.brand_name,
            "assessment_date" => &mut self.assessment_date,
            "indication" => &mut self.indication,
            "final_recommendation" => &mut self.final_recommendation,
            "comparator" => &mut self.comparator,
            "relative_effectiveness_outcome" => &mut self.relative_effectiveness_outcome,
            "cost_effectiveness_outcome" => &mut self.cost_effectiveness_outcome,
            "budget_impact_outcome" => &mut self.budget_impact_outcome,
            "managed_entry_agreements" => &mut self.managed_entry_agreements,
            "clinical_restrictions" => &mut self.clinical_restrictions,
            other => return Err(format!("unknown HTA field {other:?}")),
        };
        *slot = value;
        Ok(())
    }

    pub fn from_record(record: &Record) -> Result<Self, String> {
        let mut out = HtaRecord::default();
        for (k, v) in record {
            out.set(k, v.clone())?;
        }
        Ok(out)
    }

    pub fn to_record(&self) -> Record {
        HTA_FIELDS
            .iter()
            .map(|f| (f.to_string(), self.get(f).flatten().map(String::from)))
            .collect()
    }
}

pub fn hta_schema() -> TaskSchema {
    let fields = HTA_FIELDS
        .iter()
        .map(|f| FieldSpec {
            name: f.to_string(),
            kind: FieldKind::StringOrNull,
        })
        .collect();
    TaskSchema::new(TASK_NAME, Shape::SingleObject, fields, HTA_FIELDS).expect("static schema")
}

/// True unless the primary language subtag is English.
pub fn needs_translation_pass(doc_language: &str) -> bool {
    let primary = doc_language.split(['-', '_']).next().unwrap_or("");
    !primary.eq_ignore_ascii_case("en")
}

const MONTHS: &[(&str, u32)] = &[
    ("january", 1), ("february", 2), ("march", 3), ("april", 4), ("may", 5), ("june", 6),
    ("july", 7), ("august", 8), ("september", 9), ("october", 10), ("november", 11), ("december", 12),
    ("janvier", 1), ("février", 2), ("fevrier", 2), ("mars", 3), ("avril", 4), ("mai", 5), ("juin", 6),
    ("juillet", 7), ("août", 8), ("aout", 8), ("septembre", 9), ("octobre", 10), ("novembre", 11),
    ("décembre", 12), ("decembre", 12),
    ("januari", 1), ("februari", 2), ("maart", 3), ("mei", 5), ("juni", 6), ("juli", 7),
    ("augustus", 8), ("oktober", 10), ("sept", 9), ("juin", 6), ("jun", 6),
];

fn month_number(word: &str) -> Option<u32> {
    let w = word.to_lowercase();
    let w = w.trim_end_matches('.');
    if let Some(&(_, m)) = MONTHS.iter().find(|(name, _)| *name == w) {
        return Some(m);
    }
    // three-letter abbreviations of the English names
    (w.chars().count() == 3)
        .then(|| MONTHS[..12].iter().find(|(name, _)| name.starts_with(w)).map(|&(_, m)| m))
        .flatten()
}

fn strip_ordinal(tok: &str) -> &str {
    for suffix in ["st", "nd", "rd", "th", "er"] {
        if let Some(n) = tok.strip_suffix(suffix) {
            if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                return n;
            }
        }
    }
    tok
}

/// Normalizes day-month-year, month-day-year, ISO and textual-month dates
/// (English, French, Dutch) to `YYYY-MM-DD`. Numeric dates are read
/// day-first unless that is impossible.
pub fn normalize_date(text: &str) -> Option<String> {
    let tokens: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(strip_ordinal)
        .collect();
    let numbers: Vec<&str> = tokens.iter().copied().filter(|t| t.chars().all(|c| c.is_ascii_digit())).collect();
    let words: Vec<&str> = tokens.iter().copied().filter(|t| !t.chars().all(|c| c.is_ascii_digit())).collect();
    let num = |s: &str| s.parse::<u32>().ok();
    let date = |y: u32, m: u32, d: u32| NaiveDate::from_ymd_opt(y as i32, m, d);

    let parsed = if let Some(month) = words.iter().find_map(|w| month_number(w)) {
        let year = numbers.iter().find(|n| n.len() == 4)?;
        let day = numbers.iter().find(|n| n.len() <= 2)?;
        date(num(year)?, month, num(day)?)
    } else {
        if !words.is_empty() || numbers.len() != 3 {
            return None;
        }
        let (a, b, c) = (numbers[0], numbers[1], numbers[2]);
        if a.len() == 4 {
            date(num(a)?, num(b)?, num(c)?)
        } else if c.len() == 4 {
            date(num(c)?, num(b)?, num(a)?).or_else(|| date(num(c)?, num(a)?, num(b)?))
        } else {
            None
        }
    };
    parsed.map(|d| d.format("%Y-%m-%d").to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldStatus {
    Consistent,
    NormalizedConsistent,
    Divergent,
}

impl std::fmt::Display for FieldStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FieldStatus::Consistent => "consistent",
            FieldStatus::NormalizedConsistent => "normalized-consistent",
            FieldStatus::Divergent => "divergent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConsistencyReport {
    pub field: String,
    pub status: FieldStatus,
    /// Smallest pairwise word-set Jaccard similarity across runs.
    pub similarity: f64,
    pub values: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HtaError {
    #[error("comparing runs needs at least 2 records, got {0}")]
    TooFewRuns(usize),
}

/// Case-folded, whitespace collapsed, trailing punctuation removed.
pub fn normalize_text(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?'))
        .trim_end()
        .to_string()
}

fn word_set(s: Option<&str>) -> std::collections::BTreeSet<String> {
    s.map(normalize_text)
        .unwrap_or_default()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

pub fn jaccard(a: Option<&str>, b: Option<&str>) -> f64 {
    let (x, y) = (word_set(a), word_set(b));
    let union = x.union(&y).count();
    if union == 0 {
        return 1.0;
    }
    x.intersection(&y).count() as f64 / union as f64
}

/// Largest double below 1. Divergent values whose word sets coincide (for
/// example reordered words) are reported just under full similarity, so that
/// a similarity of exactly 1 always means the values agree.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn compare_runs(records: &[HtaRecord]) -> Result<Vec<FieldConsistencyReport>, HtaError> {
    if records.len() < 2 {
        return Err(HtaError::TooFewRuns(records.len()));
    }
    Ok(HTA_FIELDS
        .iter()
        .map(|field| {
            let values: Vec<Option<&str>> = records.iter().map(|r| r.get(field).flatten()).collect();
            let normalized: Vec<Option<String>> = values.iter().map(|v| v.map(normalize_text)).collect();
            let (status, similarity) = if values.windows(2).all(|w| w[0] == w[1]) {
                (FieldStatus::Consistent, 1.0)
            } else if normalized.windows(2).all(|w| w[0] == w[1]) {
                (FieldStatus::NormalizedConsistent, 1.0)
            } else {
                let mut min = 1.0f64;
                for i in 0..values.len() {
                    for j in i + 1..values.len() {
                        min = min.min(jaccard(values[i], values[j]));
                    }
                }
                (FieldStatus::Divergent, min.min(BELOW_ONE))
            };
            FieldConsistencyReport {
                field: field.to_string(),
                status,
                similarity,
                values: values.iter().map(|v| v.map(String::from)).collect(),
            }
        })
        .collect())
}

/// CSV with columns document_id, field, status, similarity, run1..runN.
pub fn consistency_csv(reports: &[(String, Vec<FieldConsistencyReport>)]) -> String {
    let runs = reports
        .iter()
        .flat_map(|(_, rs)| rs.iter().map(|r| r.values.len()))
        .max()
        .unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["document_id".to_string(), "field".into(), "status".into(), "similarity".into()];
    header.extend((1..=runs).map(|i| format!("run{i}")));
    w.write_record(&header).expect("in-memory write");
    for (doc, rs) in reports {
        for r in rs {
            let mut row = vec![doc.clone(), r.field.clone(), r.status.to_string(), format!("{:.4}", r.similarity)];
            row.extend((0..runs).map(|i| r.values.get(i).cloned().flatten().unwrap_or_default()));
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
}

#[derive(Debug, Clone)]
pub struct HtaTask {
    schema: TaskSchema,
    template: PromptTemplate,
    translate: PromptTemplate,
    policy: FieldPolicy,
}

pub fn default_template() -> PromptTemplate {
    PromptTemplate::new(TASK_NAME, HTA_TEMPLATE, ["data", "schema"]).expect("shipped template is valid")
}

pub fn default_translate_template() -> PromptTemplate {
    PromptTemplate::new("hta_translate", HTA_TRANSLATE_TEMPLATE, ["fields", "target_language"])
        .expect("shipped template is valid")
}

impl HtaTask {
    pub fn new(template: Option<PromptTemplate>, translate: Option<PromptTemplate>, policy: FieldPolicy) -> Self {
        HtaTask {
            schema: hta_schema(),
            template: template.unwrap_or_else(default_template),
            translate: translate.unwrap_or_else(default_translate_template),
            policy,
        }
    }
}

impl Task for HtaTask {
    fn name(&self) -> &str {
        TASK_NAME
    }

    fn schema(&self) -> &TaskSchema {
        &self.schema
    }

    fn template(&self) -> &PromptTemplate {
        &self.template
    }

    fn default_boundary(&self) -> Boundary {
        Boundary::BlankLine
    }

    fn finalize_record(&self, record: &mut Record, _doc: &SourceDocument) -> Result<Vec<String>, String> {
        let Some(Some(raw)) = record.get("assessment_date").cloned() else {
            return Ok(Vec::new());
        };
        match normalize_date(&raw) {
            Some(iso) => {
                record.insert("assessment_date".into(), Some(iso));
                Ok(Vec::new())
            }
            None => Ok(vec!["assessment_date-unparsed".into()]),
        }
    }

    fn follow_up_template(&self) -> Option<&PromptTemplate> {
        Some(&self.translate)
    }

    fn follow_up_bindings(&self, record: &Record, doc: &SourceDocument) -> Option<Bindings> {
        let hta = HtaRecord::from_record(record).ok()?;
        let tb = translation_bindings(&hta, &doc.language, &self.policy);
        (!tb.is_empty()).then(|| tb.to_bindings())
    }

    fn apply_follow_up(&self, record: &mut Record, answer: &Value) -> Result<(), String> {
        let Value::Object(map) = answer else {
            return Err("translation answer is not a JSON object".into());
        };
        for (k, v) in map {
            if !self.policy.fields.contains(k) || !record.contains_key(k) {
                return Err(format!("translation answer has unexpected key {k:?}"));
            }
            match v {
                Value::String(s) => {
                    record.insert(k.clone(), Some(s.clone()));
                }
                Value::Null => {}
                _ => return Err(format!("translated {k:?} is not a string")),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{validate_records, SchemaError};
    use serde_json::json;

    fn ivabradine() -> Value {
        json!({
            "hta_id": "NICE",
            "assessment_type": "first assessment",
            "internal_identifier": "TA267",
            "inn": "ivabradine",
            "brand_name": "Procoralan",
            "assessment_date": "28 November 2012",
            "indication": "chronic heart failure",
            "final_recommendation": "Recommended as an option for treating chronic heart failure",
            "comparator": "standard care",
            "relative_effectiveness_outcome": "reduces hospitalisation for worsening heart failure",
            "cost_effectiveness_outcome": "ICER below 20,000 GBP per QALY gained",
            "budget_impact_outcome": null,
            "managed_entry_agreements": null,
            "clinical_restrictions": "NYHA class II to IV with systolic dysfunction"
        })
    }

    #[test]
    fn schema_has_the_fourteen_fields() {
        let s = hta_schema();
        assert_eq!(s.fields.len(), 14);
        assert_eq!(s.field_names(), HTA_FIELDS);
        assert_eq!(s.required.len(), 14);
    }

    #[test]
    fn validates_a_complete_record() {
        let recs = validate_records(&ivabradine(), &hta_schema()).unwrap();
        assert_eq!(recs.len(), 1);
        let r = HtaRecord::from_record(&recs[0]).unwrap();
        assert_eq!(r.to_record(), recs[0]);
    }

    #[test]
    fn schema_rejects_extra_and_missing_fields() {
        let mut v = ivabradine();
        v["price"] = json!("100");
        assert!(matches!(validate_records(&v, &hta_schema()), Err(SchemaError::UnknownField { .. })));
        let mut v = ivabradine();
        v.as_object_mut().unwrap().remove("comparator");
        assert_eq!(
            validate_records(&v, &hta_schema()),
            Err(SchemaError::MissingField { name: "comparator".into(), index: 0 })
        );
    }

    #[test]
    fn translation_trigger() {
        assert!(!needs_translation_pass("en"));
        assert!(!needs_translation_pass("en-GB"));
        assert!(needs_translation_pass("fr"));
        assert!(needs_translation_pass("nl"));
    }

    #[test]
    fn dates() {
        for (input, want) in [
            ("2012-11-28", "2012-11-28"),
            ("28/11/2012", "2012-11-28"),
            ("11/28/2012", "2012-11-28"),
            ("03.04.2019", "2019-04-03"),
            ("28 November 2012", "2012-11-28"),
            ("November 28th, 2012", "2012-11-28"),
            ("Nov 28, 2012", "2012-11-28"),
            ("1er février 2023", "2023-02-01"),
            ("12 mei 2021", "2021-05-12"),
        ] {
            assert_eq!(normalize_date(input).as_deref(), Some(want), "{input}");
        }
        assert_eq!(normalize_date("spring 2020"), None);
        assert_eq!(normalize_date("31/02/2020"), None);
    }

    #[test]
    fn unparsed_dates_stay_verbatim_with_a_flag() {
        let task = HtaTask::new(None, None, FieldPolicy::default());
        let mut r = HtaRecord::default().to_record();
        r.insert("assessment_date".into(), Some("Q3 2020".into()));
        let flags = task.finalize_record(&mut r, &SourceDocument::new("d", "")).unwrap();
        assert_eq!(flags, vec!["assessment_date-unparsed".to_string()]);
        assert_eq!(r["assessment_date"].as_deref(), Some("Q3 2020"));
    }

    fn record_with(field: &str, value: &str) -> HtaRecord {
        let mut r: HtaRecord = serde_json::from_value(ivabradine()).unwrap();
        r.set(field, Some(value.into())).unwrap();
        r
    }

    #[test]
    fn identical_runs_are_consistent() {
        let r: HtaRecord = serde_json::from_value(ivabradine()).unwrap();
        let reports = compare_runs(&[r.clone(), r.clone(), r]).unwrap();
        assert_eq!(reports.len(), 14);
        assert!(reports.iter().all(|x| x.status == FieldStatus::Consistent && x.similarity == 1.0));
    }

    #[test]
    fn case_and_trailing_period_normalize() {
        let a = record_with("indication", "Chronic heart failure.");
        let b = record_with("indication", "chronic  heart failure");
        let reports = compare_runs(&[a, b]).unwrap();
        let ind = reports.iter().find(|r| r.field == "indication").unwrap();
        assert_eq!((ind.status, ind.similarity), (FieldStatus::NormalizedConsistent, 1.0));
    }

    #[test]
    fn reordered_words_are_divergent_below_one() {
        let a = record_with("comparator", "placebo and standard care");
        let b = record_with("comparator", "standard care and placebo");
        let reports = compare_runs(&[a, b]).unwrap();
        let c = reports.iter().find(|r| r.field == "comparator").unwrap();
        assert_eq!(c.status, FieldStatus::Divergent);
        assert!(c.similarity < 1.0 && c.similarity > 0.999);
    }

    #[test]
    fn divergent_similarity_is_the_pairwise_minimum() {
        let a = record_with("comparator", "a b c d");
        let b = record_with("comparator", "a b c d");
        let c = record_with("comparator", "a b");
        let reports = compare_runs(&[a, b, c]).unwrap();
        let r = reports.iter().find(|r| r.field == "comparator").unwrap();
        assert_eq!(r.similarity, 0.5);
    }

    #[test]
    fn csv_export() {
        let r: HtaRecord = serde_json::from_value(ivabradine()).unwrap();
        let reports = compare_runs(&[r.clone(), r]).unwrap();
        let csv = consistency_csv(&[("nice-ta267".into(), reports)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("document_id,field,status,similarity,run1,run2"));
        assert_eq!(lines.next(), Some("nice-ta267,hta_id,consistent,1.0000,NICE,NICE"));
        assert_eq!(csv.lines().count(), 15);
    }

    #[test]
    fn translation_answer_is_merged() {
        let task = HtaTask::new(None, None, FieldPolicy::default());
        let mut rec = HtaRecord::default().to_record();
        rec.insert("indication".into(), Some("insuffisance cardiaque".into()));
        let doc = SourceDocument::new("has-1", "").with_language("fr");
        assert!(task.follow_up_bindings(&rec, &doc).is_some());
        task.apply_follow_up(&mut rec, &json!({"indication": "heart failure"})).unwrap();
        assert_eq!(rec["indication"].as_deref(), Some("heart failure"));
        assert!(task.apply_follow_up(&mut rec, &json!({"inn": "x"})).is_err());
        assert!(task.follow_up_bindings(&rec, &doc.clone().with_language("en")).is_none());
    }
}
