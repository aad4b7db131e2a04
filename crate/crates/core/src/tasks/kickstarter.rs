//! Industry classification of crowdfunding projects and rater agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Boundary;
use crate::extraction::{FieldKind, FieldSpec, Record, Shape, TaskSchema};
use crate::ingest::SourceDocument;
use crate::prompting::{PromptTemplate, KICKSTARTER_TEMPLATE};

use super::Task;

pub const TASK_NAME: &str = "kickstarter";
pub const GENAI_RATER: &str = "genai";

const SHIPPED_TABLE: &str = include_str!("../../data/naics_2017_4digit.csv");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NaicsError {
    #[error("code {0:?} is not a 4-digit industry group")]
    WrongGranularity(String),
    #[error("code {0:?} is not in the 2017 table")]
    UnknownCode(String),
    #[error("code {0:?} is not numeric")]
    NotNumeric(String),
    #[error("invalid code table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NaicsCode(String);

impl NaicsCode {
    /// Syntax check only; see [`validate_naics`] for table membership.
    pub fn parse(s: &str) -> Result<Self, NaicsError> {
        let s = s.trim();
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(NaicsError::NotNumeric(s.to_string()));
        }
        if s.len() != 4 {
            return Err(NaicsError::WrongGranularity(s.to_string()));
        }
        Ok(NaicsCode(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The 2-digit sector prefix.
    pub fn sector(&self) -> &str {
        &self.0[..2]
    }
}

impl TryFrom<String> for NaicsCode {
    type Error = NaicsError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        NaicsCode::parse(&s)
    }
}

impl From<NaicsCode> for String {
    fn from(c: NaicsCode) -> String {
        c.0
    }
}

impl std::fmt::Display for NaicsCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaicsTable {
    entries: BTreeMap<NaicsCode, String>,
}

impl NaicsTable {
    /// The checked-in 2017 table.
    pub fn shipped() -> Self {
        Self::from_csv_str(SHIPPED_TABLE).expect("shipped table is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NaicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NaicsError::Table(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    /// Parses a `code,title` CSV with a header row.
    pub fn from_csv_str(text: &str) -> Result<Self, NaicsError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| NaicsError::Table(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["code", "title"] {
            return Err(NaicsError::Table(format!("expected header code,title, got {headers:?}")));
        }
        let mut entries = BTreeMap::new();
        for row in reader.records() {
            let row = row.map_err(|e| NaicsError::Table(e.to_string()))?;
            let code = NaicsCode::parse(&row[0])?;
            if entries.insert(code.clone(), row[1].to_string()).is_some() {
                return Err(NaicsError::Table(format!("duplicate code {code}")));
            }
        }
        Ok(NaicsTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn title(&self, code: &NaicsCode) -> Option<&str> {
        self.entries.get(code).map(String::as_str)
    }

    pub fn codes(&self) -> impl Iterator<Item = &NaicsCode> {
        self.entries.keys()
    }
}

pub fn validate_naics(code: &str, table: &NaicsTable) -> Result<NaicsCode, NaicsError> {
    let code = NaicsCode::parse(code)?;
    if table.title(&code).is_none() {
        return Err(NaicsError::UnknownCode(code.0));
    }
    Ok(code)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignError {
    #[error("at least 2 raters are needed, got {0}")]
    TooFewRaters(usize),
    #[error("no projects to assign")]
    NoProjects,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterAssignment {
    pub by_project: BTreeMap<String, [String; 2]>,
    pub by_rater: BTreeMap<String, Vec<String>>,
}

impl RaterAssignment {
    pub fn total_ratings(&self) -> usize {
        self.by_rater.values().map(Vec::len).sum()
    }
}

fn sorted_unique(ids: &[String]) -> Result<Vec<String>, AssignError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.clone()) {
            return Err(AssignError::DuplicateId(id.clone()));
        }
    }
    Ok(seen.into_iter().collect())
}

fn assign_in_order(projects: Vec<String>, raters: &[String]) -> RaterAssignment {
    let r = raters.len();
    let mut by_project = BTreeMap::new();
    let mut by_rater: BTreeMap<String, Vec<String>> = raters.iter().map(|id| (id.clone(), Vec::new())).collect();
    for (i, project) in projects.into_iter().enumerate() {
        let pair = [raters[i % r].clone(), raters[(i + 1) % r].clone()];
        for rater in &pair {
            by_rater.get_mut(rater).expect("known rater").push(project.clone());
        }
        by_project.insert(project, pair);
    }
    RaterAssignment { by_project, by_rater }
}

fn check_counts(projects: usize, raters: usize) -> Result<(), AssignError> {
    if raters < 2 {
        return Err(AssignError::TooFewRaters(raters));
    }
    if projects == 0 {
        return Err(AssignError::NoProjects);
    }
    Ok(())
}

/// Staggered double rating: with projects and raters sorted, project `i`
/// goes to raters `i mod R` and `(i + 1) mod R`.
pub fn assign_raters(project_ids: &[String], rater_ids: &[String]) -> Result<RaterAssignment, AssignError> {
    check_counts(project_ids.len(), rater_ids.len())?;
    let raters = sorted_unique(rater_ids)?;
    let projects = sorted_unique(project_ids)?;
    Ok(assign_in_order(projects, &raters))
}

/// Like [`assign_raters`], with projects ordered by (category, id) so that
/// every rater sees a similar category mix.
pub fn assign_raters_stratified(projects: &[(String, String)], rater_ids: &[String]) -> Result<RaterAssignment, AssignError> {
    check_counts(projects.len(), rater_ids.len())?;
    let raters = sorted_unique(rater_ids)?;
    sorted_unique(&projects.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>())?;
    let mut ordered: Vec<&(String, String)> = projects.iter().collect();
    ordered.sort_by(|a, b| (&a.1, &a.0).cmp(&(&b.1, &b.0)));
    Ok(assign_in_order(ordered.into_iter().map(|(id, _)| id.clone()).collect(), &raters))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub project_id: String,
    pub rater_id: String,
    pub code: NaicsCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RatingError {
    #[error("ratings CSV: {0}")]
    Csv(String),
    #[error("line {line}: {source}")]
    Code { line: u64, source: NaicsError },
    #[error("project {project_id:?} rated twice by {rater_id:?}")]
    Duplicate { project_id: String, rater_id: String },
}

/// Reads `project_id,rater_id,code` rows, validating every code.
pub fn parse_ratings_csv(text: &str, table: &NaicsTable) -> Result<Vec<Rating>, RatingError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| RatingError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["project_id", "rater_id", "code"] {
        return Err(RatingError::Csv(format!("expected header project_id,rater_id,code, got {headers:?}")));
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| RatingError::Csv(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let code = validate_naics(&row[2], table).map_err(|source| RatingError::Code { line, source })?;
        let (project_id, rater_id) = (row[0].to_string(), row[1].to_string());
        if !seen.insert((project_id.clone(), rater_id.clone())) {
            return Err(RatingError::Duplicate { project_id, rater_id });
        }
        out.push(Rating { project_id, rater_id, code });
    }
    Ok(out)
}

pub fn ratings_csv(ratings: &[Rating]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["project_id", "rater_id", "code"]).expect("in-memory write");
    for r in ratings {
        w.write_record([r.project_id.as_str(), r.rater_id.as_str(), r.code.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
}

/// Ratings by `rater_id` taken from validated task records.
pub fn ratings_from_records<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    rater_id: &str,
    table: &NaicsTable,
) -> Result<Vec<Rating>, NaicsError> {
    records
        .into_iter()
        .filter_map(|r| Some((r.get("project_id")?.clone()?, r.get("naics_code")?.clone()?)))
        .map(|(project_id, code)| {
            Ok(Rating {
                project_id,
                rater_id: rater_id.to_string(),
                code: validate_naics(&code, table)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub shared: usize,
    pub matched: usize,
    pub fraction: f64,
    /// Shared projects whose codes agree on the 2-digit sector. Diagnostic
    /// only; it does not enter `fraction`.
    pub sector_matched: usize,
}

/// Exact-code agreement for every unordered rater pair with shared projects,
/// keyed by `(a, b)` with `a < b`.
pub fn pairwise_agreement(ratings: &[Rating]) -> BTreeMap<(String, String), PairAgreement> {
    let mut by_rater: BTreeMap<&str, BTreeMap<&str, &NaicsCode>> = BTreeMap::new();
    for r in ratings {
        by_rater.entry(&r.rater_id).or_default().insert(&r.project_id, &r.code);
    }
    let raters: Vec<&str> = by_rater.keys().copied().collect();
    let mut out = BTreeMap::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let (ra, rb) = (&by_rater[a], &by_rater[b]);
            let (mut shared, mut matched, mut sector_matched) = (0, 0, 0);
            for (project, code_a) in ra {
                if let Some(code_b) = rb.get(project) {
                    shared += 1;
                    matched += usize::from(code_a == code_b);
                    sector_matched += usize::from(code_a.sector() == code_b.sector());
                }
            }
            if shared > 0 {
                out.insert(
                    (a.to_string(), b.to_string()),
                    PairAgreement {
                        shared,
                        matched,
                        fraction: matched as f64 / shared as f64,
                        sector_matched,
                    },
                );
            }
        }
    }
    out
}

/// `rater_a,rater_b,shared,matched,fraction`, fraction to three decimals.
pub fn agreement_report_csv(report: &BTreeMap<(String, String), PairAgreement>) -> String {
    let mut out = String::from("rater_a,rater_b,shared,matched,fraction\n");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for ((a, b), p) in report {
        w.write_record([a.clone(), b.clone(), p.shared.to_string(), p.matched.to_string(), format!("{:.3}", p.fraction)])
            .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells"));
    out
}

pub fn kickstarter_schema() -> TaskSchema {
    TaskSchema::new(
        TASK_NAME,
        Shape::ArrayOfObjects,
        vec![
            FieldSpec { name: "project_id".into(), kind: FieldKind::String },
            FieldSpec { name: "naics_code".into(), kind: FieldKind::String },
        ],
        ["project_id", "naics_code"],
    )
    .expect("static schema")
}

pub fn default_template() -> PromptTemplate {
    PromptTemplate::new(TASK_NAME, KICKSTARTER_TEMPLATE, ["data", "schema"]).expect("shipped template is valid")
}

#[derive(Debug, Clone)]
pub struct KickstarterTask {
    schema: TaskSchema,
    template: PromptTemplate,
    table: NaicsTable,
}

impl KickstarterTask {
    pub fn new(template: Option<PromptTemplate>, table: NaicsTable) -> Self {
        KickstarterTask {
            schema: kickstarter_schema(),
            template: template.unwrap_or_else(default_template),
            table,
        }
    }
}

impl Task for KickstarterTask {
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
        Boundary::CsvRow
    }

    fn finalize_record(&self, record: &mut Record, _doc: &SourceDocument) -> Result<Vec<String>, String> {
        let code = record.get("naics_code").cloned().flatten().unwrap_or_default();
        let code = validate_naics(&code, &self.table).map_err(|e| e.to_string())?;
        record.insert("naics_code".into(), Some(code.0));
        Ok(Vec::new())
    }
}
