//! Classifying how a candidate name diverges from a reference name.

use serde::{Deserialize, Serialize};

use super::name::{author_token_equivalent, authors_equivalent, SpeciesName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffCategory {
    Consistent,
    HarmlessAuthorVariant,
    OcrResidual,
    Erroneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Substitution,
    Inclusion,
    Exclusion,
}

impl std::fmt::Display for DiffCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DiffCategory::Consistent => "consistent",
            DiffCategory::HarmlessAuthorVariant => "harmless-author-variant",
            DiffCategory::OcrResidual => "ocr-residual",
            DiffCategory::Erroneous => "erroneous",
        })
    }
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorKind::Substitution => "substitution",
            ErrorKind::Inclusion => "inclusion",
            ErrorKind::Exclusion => "exclusion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffClass {
    pub category: DiffCategory,
    /// Set exactly when the category is erroneous.
    pub sub: Option<ErrorKind>,
    pub detail: String,
}

/// Outcome for one name component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDiff {
    pub slot: &'static str,
    pub category: DiffCategory,
    pub sub: Option<ErrorKind>,
    pub candidate: Option<String>,
    pub reference: Option<String>,
}

fn slots(n: &SpeciesName) -> [(&'static str, Option<&str>); 9] {
    [
        ("genus", Some(n.genus.as_str())),
        ("epithet", n.epithet.as_deref()),
        ("subspecies", n.subspecies.as_deref()),
        ("variety", n.variety.as_deref()),
        ("form", n.form.as_deref()),
        ("cultivar", n.cultivar.as_deref()),
        ("basionym_authors", n.basionym_authors.as_deref()),
        ("authors", n.authors.as_deref()),
        ("synonym", n.synonym.as_deref()),
    ]
}

fn is_author_slot(slot: &str) -> bool {
    matches!(slot, "authors" | "basionym_authors")
}

/// Whether every token of `small` can be paired with a distinct token of
/// `big`, in order.
fn contains_tokens(big: &[&str], small: &[&str], eq: impl Fn(&str, &str) -> bool) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| eq(b, s)))
}

fn author_eq(a: &str, b: &str) -> bool {
    let norm = |s: &str| s.chars().filter(|c| !matches!(c, '.' | '(' | ')')).collect::<String>().to_lowercase();
    let (a, b) = (norm(a), norm(b));
    !a.is_empty() && !b.is_empty() && author_token_equivalent(&a, &b)
}

fn error_kind(slot: &str, cand: Option<&str>, reference: Option<&str>) -> ErrorKind {
    match (cand, reference) {
        (None, _) => ErrorKind::Exclusion,
        (Some(_), None) => ErrorKind::Inclusion,
        (Some(c), Some(r)) => {
            let ct: Vec<&str> = c.split_whitespace().collect();
            let rt: Vec<&str> = r.split_whitespace().collect();
            let eq: &dyn Fn(&str, &str) -> bool = if is_author_slot(slot) { &author_eq } else { &|a, b| a == b };
            if ct.len() > rt.len() && contains_tokens(&ct, &rt, eq) {
                ErrorKind::Inclusion
            } else if ct.len() < rt.len() && contains_tokens(&rt, &ct, eq) {
                ErrorKind::Exclusion
            } else {
                ErrorKind::Substitution
            }
        }
    }
}

/// Per-component comparison, in the order genus, epithet, ranks, cultivar,
/// basionym, authors, synonym.
pub fn slot_diffs(candidate: &SpeciesName, reference: &SpeciesName, raw_source: Option<&str>) -> Vec<SlotDiff> {
    slots(candidate)
        .into_iter()
        .zip(slots(reference))
        .map(|((slot, c), (_, r))| {
            let (category, sub) = if c == r {
                (DiffCategory::Consistent, None)
            } else if is_author_slot(slot) && c.is_some() && r.is_some() && authors_equivalent(c.unwrap(), r.unwrap()) {
                (DiffCategory::HarmlessAuthorVariant, None)
            } else {
                let kind = error_kind(slot, c, r);
                // A same-slot replacement copied from the OCR text is a residual
                // of the input, not something the model introduced.
                let from_source = kind == ErrorKind::Substitution
                    && raw_source.zip(c).is_some_and(|(src, c)| src.contains(c));
                if from_source {
                    (DiffCategory::OcrResidual, None)
                } else {
                    (DiffCategory::Erroneous, Some(kind))
                }
            };
            SlotDiff {
                slot,
                category,
                sub,
                candidate: c.map(String::from),
                reference: r.map(String::from),
            }
        })
        .collect()
}

/// Overall class: erroneous if any component is (with the first such
/// component's kind), otherwise the most severe remaining category.
pub fn classify_name_diff(candidate: &SpeciesName, reference: &SpeciesName, raw_source: Option<&str>) -> DiffClass {
    let diffs = slot_diffs(candidate, reference, raw_source);
    let describe = |d: &SlotDiff| {
        format!(
            "{}: {:?} vs {:?}",
            d.slot,
            d.candidate.as_deref().unwrap_or(""),
            d.reference.as_deref().unwrap_or("")
        )
    };
    if let Some(d) = diffs.iter().find(|d| d.category == DiffCategory::Erroneous) {
        return DiffClass {
            category: DiffCategory::Erroneous,
            sub: d.sub,
            detail: describe(d),
        };
    }
    let worst = diffs.iter().map(|d| d.category).max().unwrap_or(DiffCategory::Consistent);
    let detail = diffs
        .iter()
        .filter(|d| d.category == worst && worst != DiffCategory::Consistent)
        .map(describe)
        .collect::<Vec<_>>()
        .join("; ");
    DiffClass {
        category: worst,
        sub: None,
        detail,
    }
}
