//! Species-name extraction from seed lists.

mod diff;
mod name;

pub use diff::{classify_name_diff, slot_diffs, DiffCategory, DiffClass, ErrorKind, SlotDiff};
pub use name::{authors_equivalent, format_species_name, parenthesize, parse_species_name, NameError, SpeciesName};

use crate::chunker::Boundary;
use crate::eval::{set_metrics, SetMetrics};
use crate::extraction::{FieldKind, FieldSpec, Record, Shape, TaskSchema};
use crate::ingest::SourceDocument;
use crate::prompting::{PromptTemplate, SEEDLIST_TEMPLATE};

use super::Task;

pub const TASK_NAME: &str = "seedlist";

const OPTIONAL_FIELDS: [&str; 7] = [
    "subspecies",
    "variety",
    "form",
    "cultivar",
    "basionym_authors",
    "authors",
    "synonym",
];

/// Array of name objects. `epithet` must be present but may be null, so
/// that damaged names survive as incomplete records.
pub fn seedlist_schema() -> TaskSchema {
    let mut fields = vec![
        FieldSpec { name: "genus".into(), kind: FieldKind::String },
        FieldSpec { name: "epithet".into(), kind: FieldKind::StringOrNull },
    ];
    fields.extend(OPTIONAL_FIELDS.iter().map(|f| FieldSpec {
        name: f.to_string(),
        kind: FieldKind::StringOrNull,
    }));
    TaskSchema::new(TASK_NAME, Shape::ArrayOfObjects, fields, ["genus", "epithet"]).expect("static schema")
}

pub fn species_from_record(record: &Record) -> Option<SpeciesName> {
    let get = |k: &str| record.get(k).cloned().flatten().filter(|s| !s.trim().is_empty());
    Some(SpeciesName {
        genus: get("genus")?,
        epithet: get("epithet"),
        subspecies: get("subspecies"),
        variety: get("variety"),
        form: get("form"),
        cultivar: get("cultivar"),
        basionym_authors: get("basionym_authors").map(|b| parenthesize(&b)),
        authors: get("authors"),
        synonym: get("synonym"),
    })
}

pub fn species_to_record(name: &SpeciesName) -> Record {
    let mut r = Record::new();
    r.insert("genus".into(), Some(name.genus.clone()));
    r.insert("epithet".into(), name.epithet.clone());
    r.insert("subspecies".into(), name.subspecies.clone());
    r.insert("variety".into(), name.variety.clone());
    r.insert("form".into(), name.form.clone());
    r.insert("cultivar".into(), name.cultivar.clone());
    r.insert("basionym_authors".into(), name.basionym_authors.clone());
    r.insert("authors".into(), name.authors.clone());
    r.insert("synonym".into(), name.synonym.clone());
    r
}

fn optional_authors_match(a: Option<&str>, b: Option<&str>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => authors_equivalent(a, b),
        _ => true,
    }
}

/// Same taxon: genus, epithet, ranks and cultivar equal, and author
/// citations equivalent wherever both sides give them.
pub fn same_species(a: &SpeciesName, b: &SpeciesName) -> bool {
    a.genus == b.genus
        && a.epithet == b.epithet
        && a.subspecies == b.subspecies
        && a.variety == b.variety
        && a.form == b.form
        && a.cultivar == b.cultivar
        && optional_authors_match(a.basionym_authors.as_deref(), b.basionym_authors.as_deref())
        && optional_authors_match(a.authors.as_deref(), b.authors.as_deref())
}

pub fn score_page(extracted: &[SpeciesName], truth: &[SpeciesName]) -> SetMetrics {
    set_metrics(extracted, truth, same_species)
}

#[derive(Debug, Clone)]
pub struct SeedlistTask {
    schema: TaskSchema,
    template: PromptTemplate,
}

impl SeedlistTask {
    pub fn new(template: Option<PromptTemplate>) -> Self {
        SeedlistTask {
            schema: seedlist_schema(),
            template: template.unwrap_or_else(default_template),
        }
    }
}

pub fn default_template() -> PromptTemplate {
    PromptTemplate::new(TASK_NAME, SEEDLIST_TEMPLATE, ["data", "schema"]).expect("shipped template is valid")
}

impl Task for SeedlistTask {
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
        if species_from_record(record).is_none() {
            return Err("record has an empty genus".into());
        }
        let incomplete = record.get("epithet").is_some_and(Option::is_none);
        Ok(if incomplete { vec!["incomplete".into()] } else { Vec::new() })
    }
}
