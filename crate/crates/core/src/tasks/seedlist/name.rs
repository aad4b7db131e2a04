//! Botanical name grammar: parsing, canonical formatting, author equivalence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("no genus-like token in {0:?}")]
    UnparseableName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct SpeciesName {
    pub genus: String,
    /// `None` only for damaged names, which are then incomplete.
    pub epithet: Option<String>,
    pub subspecies: Option<String>,
    pub variety: Option<String>,
    pub form: Option<String>,
    pub cultivar: Option<String>,
    /// Kept with its parentheses, e.g. `(L.)`.
    pub basionym_authors: Option<String>,
    pub authors: Option<String>,
    pub synonym: Option<String>,
}

impl SpeciesName {
    pub fn new(genus: impl Into<String>, epithet: impl Into<String>) -> Self {
        SpeciesName {
            genus: genus.into(),
            epithet: Some(epithet.into()),
            ..Default::default()
        }
    }

    pub fn is_incomplete(&self) -> bool {
        self.epithet.is_none()
    }
}

impl std::fmt::Display for SpeciesName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_species_name(self))
    }
}

/// Wraps a basionym author string in parentheses unless it already is.
pub fn parenthesize(s: &str) -> String {
    let s = s.trim();
    if s.starts_with('(') && s.ends_with(')') {
        s.to_string()
    } else {
        format!("({s})")
    }
}

pub fn format_species_name(name: &SpeciesName) -> String {
    let mut parts: Vec<String> = vec![name.genus.clone()];
    parts.extend(name.epithet.clone());
    for (marker, value) in [("subsp.", &name.subspecies), ("var.", &name.variety), ("f.", &name.form)] {
        if let Some(v) = value {
            parts.push(format!("{marker} {v}"));
        }
    }
    if let Some(c) = &name.cultivar {
        parts.push(format!("'{c}'"));
    }
    if let Some(b) = &name.basionym_authors {
        parts.push(parenthesize(b));
    }
    parts.extend(name.authors.clone());
    if let Some(s) = &name.synonym {
        parts.push(format!("(= {s})"));
    }
    parts.join(" ")
}

fn closing_quote(open: char) -> Option<char> {
    match open {
        '\'' => Some('\''),
        '"' => Some('"'),
        '\u{2018}' => Some('\u{2019}'),
        '\u{201C}' => Some('\u{201D}'),
        _ => None,
    }
}

/// Whitespace tokens, except that quoted phrases and parenthesized groups
/// stay whole. Unclosed groups run to the end of the text.
fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if let Some(close) = closing_quote(chars[i]) {
            i += 1;
            while i < chars.len() && chars[i] != close {
                i += 1;
            }
            i = (i + 1).min(chars.len());
        } else if chars[i] == '(' {
            let mut depth = 0;
            while i < chars.len() {
                match chars[i] {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    _ => {}
                }
                i += 1;
                if depth == 0 {
                    break;
                }
            }
        } else {
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
        }
        tokens.push(chars[start..i].iter().collect());
    }
    tokens
}

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

/// A plain lowercase word such as an epithet or a rank value.
fn is_lower_word(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_lowercase) && !tok.ends_with('.')
}

fn rank_of(tok: &str) -> Option<usize> {
    match tok {
        "subsp." | "ssp." => Some(0),
        "var." => Some(1),
        "f." | "fo." | "forma" => Some(2),
        _ => None,
    }
}

fn is_quoted(tok: &str) -> bool {
    tok.chars().next().and_then(closing_quote).is_some()
}

fn unquote(tok: &str) -> String {
    let mut chars = tok.chars();
    let open = chars.next().unwrap_or('\'');
    let inner: String = chars.collect();
    match closing_quote(open) {
        Some(close) => inner.strip_suffix(close).unwrap_or(&inner).to_string(),
        None => inner,
    }
}

fn synonym_group(tok: &str) -> Option<String> {
    let inner = tok.strip_prefix('(')?.strip_suffix(')')?.trim_start();
    inner.strip_prefix('=').map(|s| s.trim().to_string())
}

pub fn parse_species_name(text: &str) -> Result<SpeciesName, NameError> {
    let tokens = tokenize(text.trim());
    let genus_at = tokens
        .iter()
        .position(|t| is_capitalized(t) && !t.starts_with('('))
        .ok_or_else(|| NameError::UnparseableName(text.to_string()))?;
    let mut name = SpeciesName::default();
    name.genus = match genus_at.checked_sub(1).map(|i| tokens[i].as_str()) {
        Some(hybrid @ ("×" | "x")) => format!("{hybrid} {}", tokens[genus_at]),
        _ => tokens[genus_at].clone(),
    };

    let mut i = genus_at + 1;
    let next_is_lower = |j: usize| tokens.get(j).is_some_and(|t| is_lower_word(t));

    // Epithet stream: qualifiers, a hybrid sign or an infrageneric bracket,
    // then the epithet word itself, then an optional "× other" formula.
    let mut stream: Vec<&str> = Vec::new();
    let mut j = i;
    while let Some(t) = tokens.get(j) {
        let t = t.as_str();
        let qualifier = matches!(t, "cf." | "aff." | "×" | "x")
            || (t.starts_with('(') && t.ends_with(')') && t[1..].starts_with(char::is_uppercase) && !t.contains('.'));
        if qualifier && (next_is_lower(j + 1) || tokens.get(j + 1).is_some_and(|n| matches!(n.as_str(), "×" | "x"))) {
            stream.push(t);
            j += 1;
        } else {
            break;
        }
    }
    if next_is_lower(j) && rank_of(&tokens[j]).is_none() {
        stream.push(&tokens[j]);
        j += 1;
        if tokens.get(j).is_some_and(|t| t == "×") && next_is_lower(j + 1) {
            stream.push(&tokens[j]);
            stream.push(&tokens[j + 1]);
            j += 2;
        }
        name.epithet = Some(stream.join(" "));
        i = j;
    }

    let mut authors: Vec<String> = Vec::new();
    while i < tokens.len() {
        let t = tokens[i].as_str();
        if let Some(syn) = synonym_group(t) {
            name.synonym = Some(syn);
            i += 1;
            continue;
        }
        if t == "=" || (t.starts_with('=') && t.len() > 1) {
            let mut rest = vec![t.trim_start_matches('=')];
            rest.extend(tokens[i + 1..].iter().map(String::as_str));
            let syn = rest.join(" ").trim().to_string();
            name.synonym = (!syn.is_empty()).then_some(syn);
            break;
        }
        if let Some(rank) = rank_of(t).filter(|_| next_is_lower(i + 1)) {
            let value = Some(tokens[i + 1].clone());
            match rank {
                0 => name.subspecies = value,
                1 => name.variety = value,
                _ => name.form = value,
            }
            i += 2;
            continue;
        }
        if is_quoted(t) && name.cultivar.is_none() {
            name.cultivar = Some(unquote(t));
        } else if t.starts_with('(') && authors.is_empty() && name.basionym_authors.is_none() {
            name.basionym_authors = Some(t.to_string());
        } else {
            authors.push(t.to_string());
        }
        i += 1;
    }
    if !authors.is_empty() {
        name.authors = Some(authors.join(" "));
    }
    Ok(name)
}

fn author_tokens(s: &str) -> Vec<String> {
    s.chars()
        .filter(|c| !matches!(c, '.' | '(' | ')'))
        .collect::<String>()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '&')
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

pub(crate) fn author_token_equivalent(a: &str, b: &str) -> bool {
    let (short, long) = if a.chars().count() <= b.chars().count() { (a, b) } else { (b, a) };
    short == long || (short.chars().count() >= 2 && long.starts_with(short))
}

/// Abbreviation-tolerant author comparison: same number of tokens, each
/// pair equal or one a prefix (of at least two letters) of the other.
/// Periods, parentheses and case are ignored.
pub fn authors_equivalent(a: &str, b: &str) -> bool {
    let (ta, tb) = (author_tokens(a), author_tokens(b));
    ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| author_token_equivalent(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> SpeciesName {
        parse_species_name(s).unwrap()
    }

    #[test]
    fn basionym_and_authors() {
        let n = p("Chenopodium capitatum (L.) Asch.");
        assert_eq!(n.genus, "Chenopodium");
        assert_eq!(n.epithet.as_deref(), Some("capitatum"));
        assert_eq!(n.basionym_authors.as_deref(), Some("(L.)"));
        assert_eq!(n.authors.as_deref(), Some("Asch."));
    }

    #[test]
    fn variety() {
        let n = p("Helianthemum apenninum var. roseum Gross.");
        assert_eq!(n.variety.as_deref(), Some("roseum"));
        assert_eq!(n.authors.as_deref(), Some("Gross."));
    }

    #[test]
    fn cultivar() {
        let n = p("Genus epithet 'Golden Queen'");
        assert_eq!(n.cultivar.as_deref(), Some("Golden Queen"));
        assert_eq!(format_species_name(&n), "Genus epithet 'Golden Queen'");
    }

    #[test]
    fn missing_epithet_is_incomplete() {
        let n = p("Helianthemum var. roseum Grosser");
        assert!(n.is_incomplete());
        assert_eq!(n.variety.as_deref(), Some("roseum"));
        assert_eq!(n.authors.as_deref(), Some("Grosser"));
        assert!(p("Palisota C.B.Clarke").is_incomplete());
    }

    #[test]
    fn round_trips() {
        for s in [
            "Tuberaria guttata (L.) Fourr.",
            "Achillea ageratifolia (Sibth. & Sm.) Boiss.",
            "Palisota mannii C.B.Clarke",
            "Cistus crispus",
            "Rosa canina subsp. dumalis var. alba f. rubra 'Kiese' (L.) Mill. (= Rosa dumalis)",
        ] {
            assert_eq!(format_species_name(&p(s)), s);
        }
    }

    #[test]
    fn filius_is_an_author_not_a_form() {
        let n = p("Impatiens balsamina Hook. f.");
        assert_eq!((n.form, n.authors.as_deref()), (None, Some("Hook. f.")));
    }

    #[test]
    fn hybrids_and_qualifiers_stay_in_the_epithet() {
        assert_eq!(p("Cistus × purpureus Lam.").epithet.as_deref(), Some("× purpureus"));
        assert_eq!(p("Cistus cf. crispus").epithet.as_deref(), Some("cf. crispus"));
        assert_eq!(p("Salix (Vetrix) caprea L.").epithet.as_deref(), Some("(Vetrix) caprea"));
        let n = p("× Cupressocyparis leylandii Dallim.");
        assert_eq!((n.genus.as_str(), n.epithet.as_deref()), ("× Cupressocyparis", Some("leylandii")));
        assert_eq!(format_species_name(&n), "× Cupressocyparis leylandii Dallim.");
    }

    #[test]
    fn trailing_groups_after_authors() {
        let n = p("Achillea millefolium L. (NG)");
        assert_eq!((n.basionym_authors, n.authors.as_deref()), (None, Some("L. (NG)")));
        let n = p("Cistus crispus L. = Cistus villosus");
        assert_eq!(n.synonym.as_deref(), Some("Cistus villosus"));
    }

    #[test]
    fn leading_catalogue_numbers_are_skipped() {
        assert_eq!(p("123 Cistus crispus L."), p("Cistus crispus L."));
    }

    #[test]
    fn no_genus() {
        assert!(matches!(parse_species_name("l. 12 ."), Err(NameError::UnparseableName(_))));
    }

    #[test]
    fn author_equivalence_examples() {
        assert!(authors_equivalent("Asch.", "Aschers."));
        assert!(authors_equivalent("Sm.", "Smith"));
        assert!(authors_equivalent("(Sibth. & Sm.)", "(Sibth. & Smith)"));
        assert!(authors_equivalent("Schlechtend.", "Schlechtendal"));
        assert!(!authors_equivalent("Schult.", "Scharnt."));
        assert!(authors_equivalent("L.", "L."));
        assert!(!authors_equivalent("L.", "L. (NG)"));
        assert!(!authors_equivalent("L.", "Lam."));
    }
}
