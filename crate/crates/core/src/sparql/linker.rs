use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::stem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkRole {
    Entity,
    Predicate,
    Class,
}

impl fmt::Display for LinkRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkRole::Entity => "entity",
            LinkRole::Predicate => "predicate",
            LinkRole::Class => "class",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot link {role} {term:?}; nearest labels: {candidates:?}")]
pub struct LinkError {
    pub role: LinkRole,
    pub term: String,
    pub candidates: Vec<String>,
}

/// Local name of an IRI: the part after the last `/` or `#`.
pub fn local_name(iri: &str) -> &str {
    iri.rsplit(['/', '#']).next().unwrap_or(iri)
}

/// Human label of an entity IRI: local name with underscores as spaces.
pub fn iri_label(iri: &str) -> String {
    local_name(iri).replace('_', " ")
}

/// Label of a predicate or class IRI: camel case split into lowercase words.
pub fn predicate_label(iri: &str) -> String {
    let local = local_name(iri);
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = local.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' || c == '-' || c == ' ' {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        let boundary = c.is_uppercase()
            && i > 0
            && (chars[i - 1].is_lowercase()
                || chars[i - 1].is_ascii_digit()
                || chars.get(i + 1).is_some_and(|n| n.is_lowercase()) && chars[i - 1].is_uppercase());
        if boundary && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.join(" ")
}

/// Lowercase, underscores as spaces, single spaces.
pub fn normalize_label(label: &str) -> String {
    label
        .replace('_', " ")
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn stem_label(label: &str) -> String {
    normalize_label(label).split(' ').map(stem).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct LabelMap {
    exact: BTreeMap<String, String>,
    stemmed: BTreeMap<String, String>,
}

impl LabelMap {
    fn insert(&mut self, label: &str, iri: &str) {
        self.exact.entry(normalize_label(label)).or_insert_with(|| iri.to_string());
        self.stemmed.entry(stem_label(label)).or_insert_with(|| iri.to_string());
    }

    fn lookup(&self, label: &str, stemmed_fallback: bool, role: LinkRole) -> Result<&str, LinkError> {
        let key = normalize_label(label);
        if let Some(iri) = self.exact.get(&key) {
            return Ok(iri);
        }
        if stemmed_fallback {
            if let Some(iri) = self.stemmed.get(&stem_label(label)) {
                return Ok(iri);
            }
        }
        let mut scored: Vec<(f64, &String)> = self
            .exact
            .keys()
            .map(|k| (strsim::jaro_winkler(&key, k), k))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Err(LinkError {
            role,
            term: label.to_string(),
            candidates: scored.into_iter().take(3).map(|(_, k)| k.clone()).collect(),
        })
    }
}

/// Closed-world label→IRI index for entities, predicates and classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkerIndex {
    entities: LabelMap,
    predicates: LabelMap,
    classes: LabelMap,
}

impl LinkerIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, label: &str, iri: &str) {
        self.entities.insert(label, iri);
    }

    pub fn add_predicate(&mut self, label: &str, iri: &str) {
        self.predicates.insert(label, iri);
    }

    pub fn add_class(&mut self, label: &str, iri: &str) {
        self.classes.insert(label, iri);
    }

    pub fn link_entity(&self, label: &str) -> Result<&str, LinkError> {
        self.entities.lookup(label, false, LinkRole::Entity)
    }

    /// Exact normalized label first, then a stemmed match.
    pub fn link_predicate(&self, label: &str) -> Result<&str, LinkError> {
        self.predicates.lookup(label, true, LinkRole::Predicate)
    }

    pub fn link_class(&self, label: &str) -> Result<&str, LinkError> {
        self.classes.lookup(label, true, LinkRole::Class)
    }

    pub fn predicate_labels(&self) -> impl Iterator<Item = &String> {
        self.predicates.exact.keys()
    }

    pub fn class_labels(&self) -> impl Iterator<Item = &String> {
        self.classes.exact.keys()
    }

    pub fn entity_labels(&self) -> impl Iterator<Item = &String> {
        self.entities.exact.keys()
    }

    /// Registers every IRI of a query under its derived label and role.
    pub fn absorb(&mut self, query: &super::SparqlQuery) {
        for p in &query.patterns {
            let (s, pred, o) = (&p.subject, &p.predicate, &p.object);
            let super::PatternTerm::Iri(pred) = pred else { continue };
            if pred == super::RDF_TYPE {
                if let super::PatternTerm::Iri(c) = o {
                    self.add_class(&predicate_label(c), c);
                }
            } else {
                self.add_predicate(&predicate_label(pred), pred);
                if let super::PatternTerm::Iri(o) = o {
                    self.add_entity(&iri_label(o), o);
                }
            }
            if let super::PatternTerm::Iri(s) = s {
                self.add_entity(&iri_label(s), s);
            }
        }
    }
}
