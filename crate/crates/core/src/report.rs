//! Run-level evaluation: accuracy against ground truth, agreement across
//! repeated runs, and the seedlist divergence table.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{consistency, full_agreement_fraction, set_metrics, ConsistencyReport, SetMetrics};
use crate::ingest::{GroundTruth, GroundTruthKind};
use crate::pipeline::RunResult;
use crate::tasks::hta::{self, compare_runs, normalize_date, normalize_text, FieldConsistencyReport, HtaRecord, HTA_FIELDS};
use crate::tasks::seedlist::{
    classify_name_diff, format_species_name, parse_species_name, same_species, species_from_record, DiffCategory, ErrorKind,
    SpeciesName,
};
use crate::tasks::{kickstarter, seedlist};

/// Placeholder value for a record that one run produced and another did not.
pub const ABSENT: &str = "<absent>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("runs of task {task:?} cannot be scored against {kind} ground truth")]
    KindMismatch { task: String, kind: GroundTruthKind },
    #[error("runs mix tasks {0:?} and {1:?}")]
    MixedTasks(String, String),
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("task {0:?} has no such report")]
    Unsupported(String),
}

fn expected_kind(task: &str) -> Option<GroundTruthKind> {
    match task {
        seedlist::TASK_NAME => Some(GroundTruthKind::SpeciesSet),
        hta::TASK_NAME => Some(GroundTruthKind::HtaRecord),
        kickstarter::TASK_NAME => Some(GroundTruthKind::NaicsLabel),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMetrics {
    pub key: String,
    pub metrics: SetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub run_id: String,
    pub task_name: String,
    pub per_key: Vec<KeyMetrics>,
    /// Counts pooled over every key.
    pub overall: SetMetrics,
    /// Output keys with no ground truth; left out of the scores.
    pub unscored: Vec<String>,
}

fn species_of(result: &RunResult) -> BTreeMap<&str, Vec<SpeciesName>> {
    let mut out: BTreeMap<&str, Vec<SpeciesName>> = BTreeMap::new();
    for r in &result.records {
        if let Some(name) = species_from_record(&r.fields) {
            out.entry(r.doc_id.as_str()).or_default().push(name);
        }
    }
    out
}

fn hta_items(record: &HtaRecord) -> Vec<(String, String)> {
    HTA_FIELDS
        .iter()
        .filter_map(|f| {
            let v = record.get(f).flatten()?;
            let v = if *f == "assessment_date" { normalize_date(v).unwrap_or_else(|| v.to_string()) } else { v.to_string() };
            Some((f.to_string(), normalize_text(&v)))
        })
        .collect()
}

fn keyed_codes(result: &RunResult) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &result.records {
        if let (Some(Some(p)), Some(Some(c))) = (r.fields.get("project_id"), r.fields.get("naics_code")) {
            out.entry(p.clone()).or_default().push(c.clone());
        }
    }
    out
}

pub fn accuracy_report(result: &RunResult, truth: &GroundTruth) -> Result<AccuracyReport, ReportError> {
    if expected_kind(&result.task_name) != Some(truth.kind()) {
        return Err(ReportError::KindMismatch {
            task: result.task_name.clone(),
            kind: truth.kind(),
        });
    }
    let mut per_key = Vec::new();
    let unscored: Vec<String>;
    match truth {
        GroundTruth::SpeciesSet(map) => {
            let got = species_of(result);
            for (doc, names) in map {
                let predicted = got.get(doc.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                per_key.push(KeyMetrics { key: doc.clone(), metrics: set_metrics(predicted, names, same_species) });
            }
            unscored = got.keys().filter(|k| !map.contains_key(**k)).map(|k| k.to_string()).collect();
        }
        GroundTruth::HtaRecord(map) => {
            let mut by_doc: BTreeMap<&str, Vec<(String, String)>> = BTreeMap::new();
            for r in &result.records {
                if let Ok(rec) = HtaRecord::from_record(&r.fields) {
                    by_doc.entry(r.doc_id.as_str()).or_default().extend(hta_items(&rec));
                }
            }
            for (doc, record) in map {
                let predicted = by_doc.get(doc.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                per_key.push(KeyMetrics { key: doc.clone(), metrics: set_metrics(predicted, &hta_items(record), |a, b| a == b) });
            }
            unscored = by_doc.keys().filter(|k| !map.contains_key(**k)).map(|k| k.to_string()).collect();
        }
        GroundTruth::NaicsLabel(map) => {
            let got = keyed_codes(result);
            for (project, code) in map {
                let predicted = got.get(project).map(Vec::as_slice).unwrap_or(&[]);
                let truth = [code.as_str().to_string()];
                per_key.push(KeyMetrics { key: project.clone(), metrics: set_metrics(predicted, &truth, |a, b| a == b) });
            }
            unscored = got.keys().filter(|k| !map.contains_key(*k)).cloned().collect();
        }
    }
    Ok(AccuracyReport {
        run_id: result.run_id.clone(),
        task_name: result.task_name.clone(),
        overall: SetMetrics::pooled(per_key.iter().map(|k| &k.metrics)),
        per_key,
        unscored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub task_name: String,
    pub run_ids: Vec<String>,
    pub reports: Vec<ConsistencyReport<String>>,
    /// Share of keys on which every run agreed.
    pub full_agreement: f64,
    pub mean_agreement: f64,
    /// Per-document field comparison for HTA runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hta_fields: Option<Vec<(String, Vec<FieldConsistencyReport>)>>,
}

fn same_task(results: &[RunResult]) -> Result<&str, ReportError> {
    let first = &results[0].task_name;
    match results.iter().find(|r| &r.task_name != first) {
        Some(other) => Err(ReportError::MixedTasks(first.clone(), other.task_name.clone())),
        None => Ok(first),
    }
}

/// One comparable value per key, per run.
fn keyed_values(task: &str, result: &RunResult) -> BTreeMap<String, String> {
    match task {
        seedlist::TASK_NAME => result
            .records
            .iter()
            .map(|r| {
                let v = species_from_record(&r.fields).map(|n| format_species_name(&n)).unwrap_or_default();
                (format!("{}#{}", r.doc_id, r.record_index), v)
            })
            .collect(),
        kickstarter::TASK_NAME => keyed_codes(result).into_iter().map(|(k, v)| (k, v.join("|"))).collect(),
        _ => result
            .records
            .iter()
            .flat_map(|r| {
                r.fields.iter().map(move |(f, v)| {
                    (format!("{}#{}/{f}", r.doc_id, r.record_index), v.as_deref().map(normalize_text).unwrap_or_default())
                })
            })
            .collect(),
    }
}

fn hta_first_records(result: &RunResult) -> BTreeMap<&str, HtaRecord> {
    let mut out = BTreeMap::new();
    for r in &result.records {
        if r.record_index == 0 {
            out.insert(r.doc_id.as_str(), HtaRecord::from_record(&r.fields).unwrap_or_default());
        }
    }
    out
}

pub fn consistency_across_runs(results: &[RunResult]) -> Result<ConsistencySummary, ReportError> {
    if results.len() < 2 {
        return Err(ReportError::TooFewRuns { needed: 2, got: results.len() });
    }
    let task = same_task(results)?;
    let per_run: Vec<BTreeMap<String, String>> = results.iter().map(|r| keyed_values(task, r)).collect();
    let keys: BTreeSet<&String> = per_run.iter().flat_map(|m| m.keys()).collect();
    let reports: Vec<ConsistencyReport<String>> = keys
        .into_iter()
        .map(|k| {
            let values: Vec<String> = per_run.iter().map(|m| m.get(k).cloned().unwrap_or_else(|| ABSENT.into())).collect();
            consistency(k.clone(), &values).expect("at least two runs")
        })
        .collect();
    let mean_agreement = if reports.is_empty() {
        1.0
    } else {
        reports.iter().map(|r| r.agreement).sum::<f64>() / reports.len() as f64
    };
    let hta_fields = (task == hta::TASK_NAME).then(|| {
        let firsts: Vec<_> = results.iter().map(hta_first_records).collect();
        let docs: BTreeSet<&str> = firsts.iter().flat_map(|m| m.keys().copied()).collect();
        docs.into_iter()
            .map(|d| {
                let records: Vec<HtaRecord> = firsts.iter().map(|m| m.get(d).cloned().unwrap_or_default()).collect();
                (d.to_string(), compare_runs(&records).expect("at least two runs"))
            })
            .collect()
    });
    Ok(ConsistencySummary {
        task_name: task.to_string(),
        run_ids: results.iter().map(|r| r.run_id.clone()).collect(),
        full_agreement: full_agreement_fraction(&reports),
        mean_agreement,
        reports,
        hta_fields,
    })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
}

/// `key,agreement,majority,tie,run1..runN`.
pub fn consistency_report_csv(reports: &[ConsistencyReport<String>]) -> String {
    let runs = reports.first().map_or(0, |r| r.values.len());
    let mut w = csv_writer();
    let mut header = vec!["key".to_string(), "agreement".into(), "majority".into(), "tie".into()];
    header.extend((1..=runs).map(|i| format!("run{i}")));
    w.write_record(&header).expect("in-memory write");
    for r in reports {
        let mut row = vec![r.key.clone(), format!("{:.4}", r.agreement), r.majority.clone(), r.tie.to_string()];
        row.extend(r.values.iter().cloned());
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffRow {
    pub doc_id: String,
    pub record_index: usize,
    /// 1-based position of the run in the input order.
    pub run: usize,
    pub candidate: String,
    pub reference: String,
    pub category: DiffCategory,
    pub sub: Option<ErrorKind>,
    pub detail: String,
}

/// Classifies every name of every run against a reference name. The
/// reference is the ground truth at the same position when given, else the
/// majority name across runs. `sources` maps document ids to the raw text
/// the names were read from.
pub fn diff_seedlist_runs(
    results: &[RunResult],
    truth: Option<&BTreeMap<String, Vec<SpeciesName>>>,
    sources: &BTreeMap<String, String>,
) -> Result<Vec<DiffRow>, ReportError> {
    let needed = if truth.is_some() { 1 } else { 2 };
    if results.len() < needed {
        return Err(ReportError::TooFewRuns { needed, got: results.len() });
    }
    let task = same_task(results)?;
    if task != seedlist::TASK_NAME {
        return Err(ReportError::Unsupported(task.to_string()));
    }
    let per_run: Vec<BTreeMap<(String, usize), SpeciesName>> = results
        .iter()
        .map(|r| {
            r.records
                .iter()
                .filter_map(|rec| Some(((rec.doc_id.clone(), rec.record_index), species_from_record(&rec.fields)?)))
                .collect()
        })
        .collect();
    let mut keys: BTreeSet<(String, usize)> = per_run.iter().flat_map(|m| m.keys().cloned()).collect();
    if let Some(t) = truth {
        keys.extend(t.iter().flat_map(|(d, names)| (0..names.len()).map(move |i| (d.clone(), i))));
    }
    let mut rows = Vec::new();
    for key in keys {
        let reference: Option<SpeciesName> = match truth {
            Some(t) => t.get(&key.0).and_then(|names| names.get(key.1)).cloned(),
            None => {
                let values: Vec<String> = per_run
                    .iter()
                    .map(|m| m.get(&key).map(format_species_name).unwrap_or_default())
                    .collect();
                let majority = consistency("", &values).expect("at least two runs").majority;
                parse_species_name(&majority).ok()
            }
        };
        let source = sources.get(&key.0).map(String::as_str);
        for (i, run) in per_run.iter().enumerate() {
            let candidate = run.get(&key);
            let (category, sub, detail) = match (candidate, &reference) {
                (Some(c), Some(r)) => {
                    let d = classify_name_diff(c, r, source);
                    (d.category, d.sub, d.detail)
                }
                (None, Some(_)) => (DiffCategory::Erroneous, Some(ErrorKind::Exclusion), "name missing from run".into()),
                (Some(_), None) => (DiffCategory::Erroneous, Some(ErrorKind::Inclusion), "name absent from reference".into()),
                (None, None) => continue,
            };
            rows.push(DiffRow {
                doc_id: key.0.clone(),
                record_index: key.1,
                run: i + 1,
                candidate: candidate.map(format_species_name).unwrap_or_default(),
                reference: reference.as_ref().map(format_species_name).unwrap_or_default(),
                category,
                sub,
                detail,
            });
        }
    }
    Ok(rows)
}

/// `doc_id,record_index,run,candidate,reference,category,sub,detail`.
pub fn diff_rows_csv(rows: &[DiffRow]) -> String {
    let mut w = csv_writer();
    w.write_record(["doc_id", "record_index", "run", "candidate", "reference", "category", "sub", "detail"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.doc_id.clone(),
            r.record_index.to_string(),
            r.run.to_string(),
            r.candidate.clone(),
            r.reference.clone(),
            r.category.to_string(),
            r.sub.map(|s| s.to_string()).unwrap_or_default(),
            r.detail.clone(),
        ])
        .expect("in-memory write");
    }
    finish_csv(w)
}

/// Count of rows per category.
pub fn diff_counts(rows: &[DiffRow]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in rows {
        let key = match r.sub {
            Some(s) => format!("{}/{}", r.category, s),
            None => r.category.to_string(),
        };
        *out.entry(key).or_default() += 1;
    }
    out
}
