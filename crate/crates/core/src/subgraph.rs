//! Subgraph-type algebra over abstracted NQT triples.
//!
//! Abstraction (NQT*) collapses numbered entity slots and entity surfaces to
//! `NER`, predicates to the relation marker `R`, and class objects of
//! `rdf:type` triples to `C`. Basic types are direction-agnostic node pairs;
//! composite types are multisets of basic types plus an optional type
//! constraint, loaded from a catalog file.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nqt::{NqtTriple, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubgraphError {
    #[error("type-constraint triple {0} has no basic subgraph type")]
    TypeConstraint(String),
    #[error("triple {0} does not match any basic subgraph type")]
    Unclassifiable(String),
    #[error("catalog line {line}: {message}")]
    CatalogSyntax { line: usize, message: String },
    #[error("invalid catalog entry {id}: {message}")]
    CatalogEntry { id: String, message: String },
    #[error("ambiguous catalog: entries {0} and {1} both match")]
    Ambiguous(String, String),
}

/// An NQT triple after abstraction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AbstractTriple(NqtTriple);

impl AbstractTriple {
    pub fn triple(&self) -> &NqtTriple {
        &self.0
    }

    pub fn is_type_constraint(&self) -> bool {
        self.0.is_type_triple()
    }
}

impl fmt::Display for AbstractTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn abstract_node(term: &Term) -> Term {
    match term {
        Term::EntitySlot(_) | Term::Word(_) => Term::EntitySlot(0),
        other => other.clone(),
    }
}

pub fn abstract_triple(triple: &NqtTriple) -> AbstractTriple {
    if triple.is_type_triple() {
        let object = match &triple.object {
            Term::Word(_) => Term::Class,
            Term::EntitySlot(_) => Term::EntitySlot(0),
            other => other.clone(),
        };
        return AbstractTriple(NqtTriple {
            subject: abstract_node(&triple.subject),
            predicate: Term::RdfType,
            object,
        });
    }
    AbstractTriple(NqtTriple {
        subject: abstract_node(&triple.subject),
        predicate: Term::Relation,
        object: abstract_node(&triple.object),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasicSubgraphType {
    /// NER – NER
    S1,
    /// NER – ?ans
    S2,
    /// NER – ?x
    S3,
    /// ?x – ?ans
    S4,
}

impl BasicSubgraphType {
    pub const ALL: [BasicSubgraphType; 4] = [Self::S1, Self::S2, Self::S3, Self::S4];

    /// The two node kinds joined by this type, in the canonical skeleton direction.
    pub fn endpoints(self) -> (Term, Term) {
        match self {
            Self::S1 => (Term::EntitySlot(0), Term::EntitySlot(0)),
            Self::S2 => (Term::EntitySlot(0), Term::AnsVar),
            Self::S3 => (Term::EntitySlot(0), Term::IntermediateVar),
            Self::S4 => (Term::IntermediateVar, Term::AnsVar),
        }
    }

    pub fn skeleton(self) -> NqtTriple {
        let (subject, object) = self.endpoints();
        NqtTriple {
            subject,
            predicate: Term::Relation,
            object,
        }
    }
}

impl fmt::Display for BasicSubgraphType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::S1 => "s1",
            Self::S2 => "s2",
            Self::S3 => "s3",
            Self::S4 => "s4",
        };
        f.write_str(s)
    }
}

impl FromStr for BasicSubgraphType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "s1" => Ok(Self::S1),
            "s2" => Ok(Self::S2),
            "s3" => Ok(Self::S3),
            "s4" => Ok(Self::S4),
            other => Err(format!("unknown basic subgraph type `{other}`")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Ner,
    Inter,
    Ans,
}

fn node_kind(term: &Term) -> Option<NodeKind> {
    match term {
        Term::EntitySlot(_) | Term::Word(_) => Some(NodeKind::Ner),
        Term::IntermediateVar => Some(NodeKind::Inter),
        Term::AnsVar => Some(NodeKind::Ans),
        _ => None,
    }
}

pub fn classify_basic(triple: &AbstractTriple) -> Result<BasicSubgraphType, SubgraphError> {
    if triple.is_type_constraint() {
        return Err(SubgraphError::TypeConstraint(triple.to_string()));
    }
    let t = triple.triple();
    let pair = node_kind(&t.subject).zip(node_kind(&t.object));
    use NodeKind::*;
    match pair {
        Some((Ner, Ner)) => Ok(BasicSubgraphType::S1),
        Some((Ner, Ans)) | Some((Ans, Ner)) => Ok(BasicSubgraphType::S2),
        Some((Ner, Inter)) | Some((Inter, Ner)) => Ok(BasicSubgraphType::S3),
        Some((Inter, Ans)) | Some((Ans, Inter)) => Ok(BasicSubgraphType::S4),
        _ => Err(SubgraphError::Unclassifiable(triple.to_string())),
    }
}

/// Role a single triple plays in the subgraph shape of an NQT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    Basic(BasicSubgraphType),
    /// `(?var, rdf:type, C)`
    TypeConstraint,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Part::Basic(b) => b.fmt(f),
            Part::TypeConstraint => f.write_str("type"),
        }
    }
}

/// Classifies a raw NQT triple. `None` means the triple fits no part
/// (two answer variables, a variable as class, a marker in a node position...).
pub fn classify_part(triple: &NqtTriple) -> Option<Part> {
    let abs = abstract_triple(triple);
    if abs.is_type_constraint() {
        let t = abs.triple();
        return (t.subject.is_variable() && t.object == Term::Class).then_some(Part::TypeConstraint);
    }
    classify_basic(&abs).ok().map(Part::Basic)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeSubgraphType {
    pub id: String,
    /// Sorted multiset of basic types.
    pub parts: Vec<BasicSubgraphType>,
    pub ner_count: usize,
    pub r_count: usize,
    pub type_constraint: bool,
}

impl CompositeSubgraphType {
    /// All parts including the type constraint, sorted.
    pub fn all_parts(&self) -> Vec<Part> {
        let mut v: Vec<Part> = self.parts.iter().copied().map(Part::Basic).collect();
        if self.type_constraint {
            v.push(Part::TypeConstraint);
        }
        v.sort();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    entries: Vec<CompositeSubgraphType>,
}

const DEFAULT_CATALOG: &str = include_str!("../data/composite_types.txt");

impl Catalog {
    pub fn builtin() -> Catalog {
        Catalog::parse(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }

    /// Parses `id | parts(csv) | ner_count | r_count | type_constraint` lines.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Catalog, SubgraphError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| SubgraphError::CatalogSyntax { line: i + 1, message };
            let cols: Vec<&str> = line.split('|').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(syntax(format!("expected 5 columns, found {}", cols.len())));
            }
            let mut parts = cols[1]
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(BasicSubgraphType::from_str)
                .collect::<Result<Vec<_>, _>>()
                .map_err(syntax)?;
            parts.sort();
            let ner_count = cols[2]
                .parse()
                .map_err(|e| syntax(format!("ner_count: {e}")))?;
            let r_count = cols[3]
                .parse()
                .map_err(|e| syntax(format!("r_count: {e}")))?;
            let type_constraint = cols[4]
                .parse()
                .map_err(|e| syntax(format!("type_constraint: {e}")))?;
            entries.push(CompositeSubgraphType {
                id: cols[0].to_string(),
                parts,
                ner_count,
                r_count,
                type_constraint,
            });
        }
        let catalog = Catalog { entries };
        catalog.validate()?;
        Ok(catalog)
    }

    fn validate(&self) -> Result<(), SubgraphError> {
        for (i, e) in self.entries.iter().enumerate() {
            let entry_err = |message: &str| SubgraphError::CatalogEntry {
                id: e.id.clone(),
                message: message.to_string(),
            };
            if e.parts.is_empty() {
                return Err(entry_err("parts must not be empty"));
            }
            if e.r_count != e.parts.len() {
                return Err(entry_err("r_count must equal the number of property-edge parts"));
            }
            for other in &self.entries[..i] {
                if other.id == e.id {
                    return Err(entry_err("duplicate id"));
                }
                if other.key() == e.key() {
                    return Err(SubgraphError::Ambiguous(other.id.clone(), e.id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[CompositeSubgraphType] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&CompositeSubgraphType> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entry keyed by tag counts: property words, named entities, class present.
    pub fn lookup(&self, r_count: usize, ner_count: usize, has_class: bool) -> Option<&CompositeSubgraphType> {
        self.entries
            .iter()
            .find(|e| e.key() == (r_count, ner_count, has_class))
    }

    /// Finds the entry whose parts multiset (and type-constraint flag) matches.
    /// When several entries share the same parts, `ner_count` decides.
    pub fn compose_type(
        &self,
        parts: &[BasicSubgraphType],
        ner_count: usize,
        type_constraint: bool,
    ) -> Result<Option<&CompositeSubgraphType>, SubgraphError> {
        let mut sorted = parts.to_vec();
        sorted.sort();
        let candidates: Vec<&CompositeSubgraphType> = self
            .entries
            .iter()
            .filter(|e| e.parts == sorted && e.type_constraint == type_constraint)
            .collect();
        let pick = match candidates.as_slice() {
            [] => None,
            [one] => Some(*one),
            many => {
                let by_ner: Vec<_> = many.iter().filter(|e| e.ner_count == ner_count).collect();
                match by_ner.as_slice() {
                    [] => None,
                    [one] => Some(**one),
                    [a, b, ..] => return Err(SubgraphError::Ambiguous(a.id.clone(), b.id.clone())),
                }
            }
        };
        Ok(pick)
    }
}

impl CompositeSubgraphType {
    fn key(&self) -> (usize, usize, bool) {
        (self.r_count, self.ner_count, self.type_constraint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nqt::Nqt;

    fn triple(text: &str) -> NqtTriple {
        Nqt::from_triple_list(&format!("[{text}]")).unwrap().triples()[0].clone()
    }

    #[test]
    fn abstraction_examples() {
        assert_eq!(abstract_triple(&triple("(NER1, located, ?x)")).to_string(), "(NER, R, ?x)");
        let ty = abstract_triple(&triple("(?ans, rdf:type, uni.)"));
        assert!(ty.is_type_constraint());
        assert_eq!(ty.to_string(), "(?ans, rdf:type, C)");
        assert_eq!(abstract_triple(&triple("(?ans, R, ?x)")).to_string(), "(?ans, R, ?x)");
    }

    #[test]
    fn abstraction_is_idempotent() {
        for text in [
            "(NER1, located, ?x)",
            "(Primus, composed, ?ans)",
            "(?ans, rdf:type, TV show)",
            "(NER2, spouse, NER1)",
            "(?ans, rdf:type, NER1)",
        ] {
            let once = abstract_triple(&triple(text));
            assert_eq!(abstract_triple(once.triple()), once, "{text}");
        }
    }

    #[test]
    fn basic_classification() {
        let c = |s: &str| classify_basic(&abstract_triple(&triple(s)));
        assert_eq!(c("(NER1, located, ?x)"), Ok(BasicSubgraphType::S3));
        assert_eq!(c("(NER, R, ?ans)"), Ok(BasicSubgraphType::S2));
        assert_eq!(c("(?ans, R, NER)"), Ok(BasicSubgraphType::S2));
        assert_eq!(c("(?x, R, ?ans)"), Ok(BasicSubgraphType::S4));
        assert_eq!(c("(?ans, military unit, ?x)"), Ok(BasicSubgraphType::S4));
        assert_eq!(c("(NER1, spouse, NER2)"), Ok(BasicSubgraphType::S1));
        assert!(matches!(c("(?ans, R, ?ans)"), Err(SubgraphError::Unclassifiable(_))));
        assert!(matches!(c("(?ans, rdf:type, film)"), Err(SubgraphError::TypeConstraint(_))));
    }

    #[test]
    fn classification_is_swap_invariant() {
        let nodes = ["NER", "NER1", "?x", "?ans", "Primus", "C"];
        for s in nodes {
            for o in nodes {
                let t = triple(&format!("({s}, p, {o})"));
                let a = classify_basic(&abstract_triple(&t)).ok();
                let b = classify_basic(&abstract_triple(&t.flipped())).ok();
                assert_eq!(a, b, "({s}, p, {o})");
            }
        }
    }

    #[test]
    fn parts_of_type_triples() {
        assert_eq!(classify_part(&triple("(?ans, rdf:type, film)")), Some(Part::TypeConstraint));
        assert_eq!(classify_part(&triple("(?x, rdf:type, C)")), Some(Part::TypeConstraint));
        assert_eq!(classify_part(&triple("(NER1, rdf:type, film)")), None);
        assert_eq!(classify_part(&triple("(?ans, rdf:type, ?x)")), None);
    }

    #[test]
    fn builtin_catalog_composition() {
        let cat = Catalog::builtin();
        assert_eq!(cat.entries().len(), 7);
        use BasicSubgraphType::*;
        let id = |parts: &[BasicSubgraphType], ner, ty| {
            cat.compose_type(parts, ner, ty).unwrap().map(|e| e.id.clone())
        };
        assert_eq!(id(&[S3, S4], 1, false).as_deref(), Some("E"));
        assert_eq!(id(&[S4, S3], 1, false).as_deref(), Some("E"));
        assert_eq!(id(&[S2, S2], 2, false).as_deref(), Some("D"));
        assert_eq!(id(&[S2], 1, false).as_deref(), Some("A"));
        assert_eq!(id(&[S1], 2, false).as_deref(), Some("B"));
        assert_eq!(id(&[S2], 1, true).as_deref(), Some("C"));
        assert_eq!(id(&[S3, S4], 1, true).as_deref(), Some("F"));
        assert_eq!(id(&[S2, S2], 2, true).as_deref(), Some("G"));
        assert_eq!(id(&[S4], 0, false), None);
    }

    #[test]
    fn catalog_lookup_by_counts() {
        let cat = Catalog::builtin();
        assert_eq!(cat.lookup(1, 1, false).unwrap().id, "A");
        assert_eq!(cat.lookup(1, 2, false).unwrap().id, "B");
        assert_eq!(cat.lookup(2, 1, false).unwrap().id, "E");
        assert!(cat.lookup(3, 1, false).is_none());
    }

    #[test]
    fn catalog_rejects_bad_entries() {
        assert!(matches!(
            Catalog::parse("A | s2 | 1 | 2 | false"),
            Err(SubgraphError::CatalogEntry { .. })
        ));
        assert!(matches!(
            Catalog::parse("A | s2 | 1 | 1 | false\nX | s3 | 1 | 1 | false"),
            Err(SubgraphError::Ambiguous(..))
        ));
        assert!(matches!(
            Catalog::parse("A | s9 | 1 | 1 | false"),
            Err(SubgraphError::CatalogSyntax { line: 1, .. })
        ));
        assert!(matches!(
            Catalog::parse("A |  | 1 | 0 | false"),
            Err(SubgraphError::CatalogEntry { .. })
        ));
    }

    #[test]
    fn compose_reports_ambiguity() {
        // Built directly; `parse` would reject this catalog.
        let cat = Catalog {
            entries: vec![
                CompositeSubgraphType { id: "P".into(), parts: vec![BasicSubgraphType::S2], ner_count: 1, r_count: 1, type_constraint: false },
                CompositeSubgraphType { id: "Q".into(), parts: vec![BasicSubgraphType::S2], ner_count: 1, r_count: 1, type_constraint: false },
            ],
        };
        assert!(matches!(
            cat.compose_type(&[BasicSubgraphType::S2], 1, false),
            Err(SubgraphError::Ambiguous(..))
        ));
    }
}
