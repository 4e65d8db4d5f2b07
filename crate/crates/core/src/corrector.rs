//! NQT correction: infer the expected subgraph type from tagger counts,
//! align the model output to it with minimal part-level changes, then refill
//! entity, relation and class positions from the question's E_x/R_x/C_x.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nqt::{Nqt, NqtTriple, Term};
use crate::preprocess::{PreprocessedQuestion, TaggedQuestion};
use crate::subgraph::{classify_part, Catalog, CompositeSubgraphType, Part};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorrectionError {
    #[error("no catalog entry for {r_count} properties, {ner_count} entities, class={has_class}")]
    NoCatalogMatch {
        r_count: usize,
        ner_count: usize,
        has_class: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedSubgraph {
    pub composite: CompositeSubgraphType,
    /// Sorted; includes [`Part::TypeConstraint`] when the composite has one.
    pub parts: Vec<Part>,
}

impl ExpectedSubgraph {
    pub fn new(composite: CompositeSubgraphType) -> Self {
        let parts = composite.all_parts();
        ExpectedSubgraph { composite, parts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Subject,
    Predicate,
    Object,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Position::Subject => "subject",
            Position::Predicate => "predicate",
            Position::Object => "object",
        })
    }
}

fn term_at(t: &NqtTriple, pos: Position) -> &Term {
    match pos {
        Position::Subject => &t.subject,
        Position::Predicate => &t.predicate,
        Position::Object => &t.object,
    }
}

fn term_at_mut(t: &mut NqtTriple, pos: Position) -> &mut Term {
    match pos {
        Position::Subject => &mut t.subject,
        Position::Predicate => &mut t.predicate,
        Position::Object => &mut t.object,
    }
}

/// One change made by the corrector. Indices refer to the triple list as it
/// stands when the edit is applied, so edits replay in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edit {
    ReplacedPart {
        index: usize,
        from: Option<Part>,
        to: Part,
        triple: NqtTriple,
    },
    AddedPart {
        part: Part,
        triple: NqtTriple,
    },
    RemovedPart {
        index: usize,
        part: Option<Part>,
    },
    FilledEntity {
        index: usize,
        position: Position,
        value: String,
    },
    FilledRelation {
        index: usize,
        value: String,
    },
    FilledClass {
        index: usize,
        value: String,
    },
}

impl Edit {
    pub fn is_part_edit(&self) -> bool {
        matches!(
            self,
            Edit::ReplacedPart { .. } | Edit::AddedPart { .. } | Edit::RemovedPart { .. }
        )
    }

    fn apply(&self, triples: &mut Vec<NqtTriple>) {
        match self {
            Edit::ReplacedPart { index, triple, .. } => triples[*index] = triple.clone(),
            Edit::AddedPart { triple, .. } => triples.push(triple.clone()),
            Edit::RemovedPart { index, .. } => {
                triples.remove(*index);
            }
            Edit::FilledEntity { index, position, value } => {
                *term_at_mut(&mut triples[*index], *position) = Term::Word(value.clone())
            }
            Edit::FilledRelation { index, value } => {
                triples[*index].predicate = Term::Word(value.clone())
            }
            Edit::FilledClass { index, value } => triples[*index].object = Term::Word(value.clone()),
        }
    }
}

fn part_name(p: &Option<Part>) -> String {
    p.map_or_else(|| "invalid".to_string(), |p| p.to_string())
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edit::ReplacedPart { index, from, to, triple } => {
                write!(f, "replace #{index} {} -> {to} {triple}", part_name(from))
            }
            Edit::AddedPart { part, triple } => write!(f, "add {part} {triple}"),
            Edit::RemovedPart { index, part } => write!(f, "remove #{index} {}", part_name(part)),
            Edit::FilledEntity { index, position, value } => {
                write!(f, "fill-entity #{index} {position} \"{value}\"")
            }
            Edit::FilledRelation { index, value } => write!(f, "fill-relation #{index} \"{value}\""),
            Edit::FilledClass { index, value } => write!(f, "fill-class #{index} \"{value}\""),
        }
    }
}

/// A position refill could not ground.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnfilledSlot {
    pub index: usize,
    pub position: Position,
    pub term: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorrectionReport {
    /// Catalog id of the expected type, when one was inferred.
    pub expected: Option<String>,
    /// Why correction was skipped (pass-through), if it was.
    pub skipped: Option<String>,
    pub edits: Vec<Edit>,
    pub unfilled: Vec<UnfilledSlot>,
    pub corrected: Option<Nqt>,
}

impl CorrectionReport {
    /// Applies the recorded edits to `input`.
    pub fn replay(&self, input: &Nqt) -> Nqt {
        let mut triples = input.triples().to_vec();
        for e in &self.edits {
            e.apply(&mut triples);
        }
        Nqt::new(triples).unwrap_or_else(|_| input.clone())
    }

    pub fn part_edit_count(&self) -> usize {
        self.edits.iter().filter(|e| e.is_part_edit()).count()
    }

    /// Audit-log lines, one per edit, prefixed with `id`.
    pub fn audit_lines(&self, id: &str) -> Vec<String> {
        let mut lines = Vec::new();
        match (&self.expected, &self.skipped) {
            (_, Some(reason)) => lines.push(format!("{id}\tpass-through\t{reason}")),
            (Some(exp), None) if self.edits.is_empty() => lines.push(format!("{id}\tconforms\t{exp}")),
            _ => {}
        }
        for e in &self.edits {
            lines.push(format!("{id}\t{e}"));
        }
        for u in &self.unfilled {
            lines.push(format!("{id}\tunfilled #{} {} {}", u.index, u.position, u.term));
        }
        lines
    }
}

/// Picks the catalog entry keyed by (|R_x|, |E_x|, C_x non-empty).
pub fn infer_expected(tagged: &TaggedQuestion, catalog: &Catalog) -> Result<ExpectedSubgraph, CorrectionError> {
    let (r_count, ner_count, has_class) = (tagged.r_x.len(), tagged.e_x.len(), !tagged.c_x.is_empty());
    catalog
        .lookup(r_count, ner_count, has_class)
        .cloned()
        .map(ExpectedSubgraph::new)
        .ok_or(CorrectionError::NoCatalogMatch {
            r_count,
            ner_count,
            has_class,
        })
}

/// Sorted part multiset of an NQT; `None` marks triples fitting no part.
pub fn nqt_parts(nqt: &Nqt) -> Vec<Option<Part>> {
    let mut parts: Vec<Option<Part>> = nqt.triples().iter().map(classify_part).collect();
    parts.sort();
    parts
}

fn is_placeholder(term: &Term) -> bool {
    matches!(term, Term::Relation | Term::Class | Term::EntitySlot(0))
}

/// True when the abstract part multiset differs from the expected one, or
/// when some word (or unfilled placeholder) is not grounded in the question.
pub fn needs_correction(nqt: &Nqt, expected: &ExpectedSubgraph, question: &PreprocessedQuestion) -> bool {
    let parts = nqt_parts(nqt);
    let expected_parts: Vec<Option<Part>> = expected.parts.iter().copied().map(Some).collect();
    if parts != expected_parts {
        return true;
    }
    nqt.triples().iter().flat_map(NqtTriple::terms).any(|term| match term {
        Term::Word(w) => !question.contains_phrase(w),
        other => is_placeholder(other),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Ner,
    Inter,
    Ans,
}

fn node_of(term: &Term) -> Option<Node> {
    match term {
        Term::EntitySlot(_) | Term::Word(_) => Some(Node::Ner),
        Term::IntermediateVar => Some(Node::Inter),
        Term::AnsVar => Some(Node::Ans),
        _ => None,
    }
}

fn canonical(node: Node) -> Term {
    match node {
        Node::Ner => Term::EntitySlot(0),
        Node::Inter => Term::IntermediateVar,
        Node::Ans => Term::AnsVar,
    }
}

/// Rewrites `triple` into the shape of `part`, changing as few positions as
/// possible and never touching positions that already fit.
pub fn rewrite_to_part(triple: &NqtTriple, part: Part) -> NqtTriple {
    match part {
        Part::Basic(basic) => {
            let (a, b) = basic.endpoints();
            let (a, b) = (node_of(&a).unwrap(), node_of(&b).unwrap());
            let s = node_of(&triple.subject);
            let o = node_of(&triple.object);
            let cost = |x: Node, y: Node| usize::from(s != Some(x)) + usize::from(o != Some(y));
            let (ts, to) = if cost(b, a) < cost(a, b) { (b, a) } else { (a, b) };
            let subject = if s == Some(ts) { triple.subject.clone() } else { canonical(ts) };
            let object = if o == Some(to) { triple.object.clone() } else { canonical(to) };
            let predicate = match &triple.predicate {
                Term::Word(_) | Term::Relation => triple.predicate.clone(),
                _ => Term::Relation,
            };
            NqtTriple { subject, predicate, object }
        }
        Part::TypeConstraint => {
            let class_like = |t: &Term| matches!(t, Term::Word(_) | Term::Class);
            let keep = usize::from(triple.subject.is_variable()) + usize::from(class_like(&triple.object));
            let flip = usize::from(triple.object.is_variable()) + usize::from(class_like(&triple.subject));
            let (subj, obj) = if flip > keep {
                (&triple.object, &triple.subject)
            } else {
                (&triple.subject, &triple.object)
            };
            NqtTriple {
                subject: if subj.is_variable() { subj.clone() } else { Term::AnsVar },
                predicate: Term::RdfType,
                object: if class_like(obj) { obj.clone() } else { Term::Class },
            }
        }
    }
}

fn skeleton(part: Part) -> NqtTriple {
    match part {
        Part::Basic(b) => b.skeleton(),
        Part::TypeConstraint => NqtTriple {
            subject: Term::AnsVar,
            predicate: Term::RdfType,
            object: Term::Class,
        },
    }
}

/// Aligns the NQT's parts with the expected multiset: matching triples are
/// kept (consumed in NQT order), unmatched triples are rewritten to a
/// seed-chosen unconsumed part, surplus triples are removed and missing parts
/// are appended as skeletons.
pub fn align_subgraphs(nqt: &Nqt, expected: &ExpectedSubgraph, rng: &mut ChaCha8Rng) -> (Nqt, Vec<Edit>) {
    let mut remaining: Vec<Part> = expected.parts.clone();
    let mut unmatched: Vec<(usize, Option<Part>)> = Vec::new();
    for (i, t) in nqt.triples().iter().enumerate() {
        let part = classify_part(t);
        match part.and_then(|p| remaining.iter().position(|r| *r == p)) {
            Some(pos) => {
                remaining.remove(pos);
            }
            None => unmatched.push((i, part)),
        }
    }
    remaining.shuffle(rng);

    let mut triples = nqt.triples().to_vec();
    let mut edits = Vec::new();
    let mut remaining = remaining.into_iter();
    let mut surplus = Vec::new();
    for (index, from) in unmatched {
        match remaining.next() {
            Some(to) => {
                let triple = rewrite_to_part(&triples[index], to);
                debug_assert_eq!(classify_part(&triple), Some(to));
                triples[index] = triple.clone();
                edits.push(Edit::ReplacedPart { index, from, to, triple });
            }
            None => surplus.push((index, from)),
        }
    }
    for (index, part) in surplus.into_iter().rev() {
        triples.remove(index);
        edits.push(Edit::RemovedPart { index, part });
    }
    for part in remaining {
        let triple = skeleton(part);
        triples.push(triple.clone());
        edits.push(Edit::AddedPart { part, triple });
    }
    let aligned = Nqt::new(triples).expect("expected parts are never empty");
    (aligned, edits)
}

fn contains_ci(list: &[String], value: &str) -> bool {
    list.iter().any(|v| v.eq_ignore_ascii_case(value))
}

/// Fills entity slots, relation markers and class markers (and words that do
/// not occur in the question) from E_x, R_x and C_x. Returns the refilled
/// NQT, the fill edits and the positions that could not be filled.
pub fn refill(
    nqt: &Nqt,
    tagged: &TaggedQuestion,
    question: &PreprocessedQuestion,
    rng: &mut ChaCha8Rng,
) -> (Nqt, Vec<Edit>, Vec<UnfilledSlot>) {
    let mut triples = nqt.triples().to_vec();
    let mut edits = Vec::new();
    let mut unfilled = Vec::new();

    let node_positions: Vec<(usize, Position)> = triples
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            let mut v = vec![(i, Position::Subject)];
            if !t.is_type_triple() {
                v.push((i, Position::Object));
            }
            v
        })
        .collect();

    // Entities already present as words.
    let mut used_entities: Vec<String> = node_positions
        .iter()
        .filter_map(|&(i, p)| match term_at(&triples[i], p) {
            Term::Word(w) if question.contains_phrase(w) => Some(w.clone()),
            _ => None,
        })
        .collect();

    let fill_entity = |triples: &mut Vec<NqtTriple>, i: usize, p: Position, value: &str, edits: &mut Vec<Edit>| {
        let edit = Edit::FilledEntity { index: i, position: p, value: value.to_string() };
        edit.apply(triples);
        edits.push(edit);
    };

    // Numbered slots take their E_x position.
    for &(i, p) in &node_positions {
        if let Term::EntitySlot(k @ 1..=2) = *term_at(&triples[i], p) {
            match tagged.e_x.get(k as usize - 1) {
                Some(value) => {
                    let value = value.clone();
                    fill_entity(&mut triples, i, p, &value, &mut edits);
                    used_entities.push(value);
                }
                None => unfilled.push(UnfilledSlot { index: i, position: p, term: Term::EntitySlot(k) }),
            }
        }
    }
    // Bare slots and ungrounded words take a random unused E_x member.
    for &(i, p) in &node_positions {
        let term = term_at(&triples[i], p).clone();
        let open = match &term {
            Term::EntitySlot(0) => true,
            Term::Word(w) => !question.contains_phrase(w),
            _ => false,
        };
        if !open {
            continue;
        }
        let candidates: Vec<&String> = tagged.e_x.iter().filter(|e| !contains_ci(&used_entities, e)).collect();
        match candidates.choose(rng) {
            Some(value) => {
                let value = (*value).clone();
                fill_entity(&mut triples, i, p, &value, &mut edits);
                used_entities.push(value);
            }
            None => unfilled.push(UnfilledSlot { index: i, position: p, term }),
        }
    }

    let mut used_relations: Vec<String> = triples
        .iter()
        .filter(|t| !t.is_type_triple())
        .filter_map(|t| match &t.predicate {
            Term::Word(w) => Some(w.clone()),
            _ => None,
        })
        .collect();
    for i in 0..triples.len() {
        if triples[i].is_type_triple() {
            continue;
        }
        let open = match &triples[i].predicate {
            Term::Relation => true,
            Term::Word(w) => !question.contains_phrase(w),
            _ => false,
        };
        if !open {
            continue;
        }
        match tagged.r_x.iter().find(|r| !contains_ci(&used_relations, r)) {
            Some(value) => {
                let edit = Edit::FilledRelation { index: i, value: value.clone() };
                edit.apply(&mut triples);
                edits.push(edit);
                used_relations.push(value.clone());
            }
            None => unfilled.push(UnfilledSlot {
                index: i,
                position: Position::Predicate,
                term: triples[i].predicate.clone(),
            }),
        }
    }

    let mut used_classes: Vec<String> = triples
        .iter()
        .filter(|t| t.is_type_triple())
        .filter_map(|t| match &t.object {
            Term::Word(w) if question.contains_phrase(w) => Some(w.clone()),
            _ => None,
        })
        .collect();
    for i in 0..triples.len() {
        if !triples[i].is_type_triple() {
            continue;
        }
        let open = match &triples[i].object {
            Term::Class => true,
            Term::Word(w) => !question.contains_phrase(w),
            _ => false,
        };
        if !open {
            continue;
        }
        match tagged.c_x.iter().find(|c| !contains_ci(&used_classes, c)) {
            Some(value) => {
                let edit = Edit::FilledClass { index: i, value: value.clone() };
                edit.apply(&mut triples);
                edits.push(edit);
                used_classes.push(value.clone());
            }
            None => unfilled.push(UnfilledSlot {
                index: i,
                position: Position::Object,
                term: triples[i].object.clone(),
            }),
        }
    }

    let refilled = Nqt::new(triples).expect("refill keeps the triple count");
    (refilled, edits, unfilled)
}

/// The NQT correction pipeline. Falls back to pass-through when the catalog
/// has no entry for the question's tag counts.
#[derive(Debug, Clone)]
pub struct Corrector {
    catalog: Catalog,
    seed: u64,
}

impl Corrector {
    pub fn new(catalog: Catalog, seed: u64) -> Self {
        Corrector { catalog, seed }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn correct(&self, nqt: &Nqt, tagged: &TaggedQuestion, question: &PreprocessedQuestion) -> (Nqt, CorrectionReport) {
        correct(nqt, tagged, question, &self.catalog, self.seed)
    }
}

/// Numbered entity slots with no matching E_x member.
fn dangling_slots(nqt: &Nqt, tagged: &TaggedQuestion) -> Vec<UnfilledSlot> {
    let mut out = Vec::new();
    for (index, t) in nqt.triples().iter().enumerate() {
        for position in [Position::Subject, Position::Object] {
            if let Term::EntitySlot(k @ 1..=2) = *term_at(t, position) {
                if k as usize > tagged.e_x.len() {
                    out.push(UnfilledSlot { index, position, term: Term::EntitySlot(k) });
                }
            }
        }
    }
    out
}

pub fn correct(
    nqt: &Nqt,
    tagged: &TaggedQuestion,
    question: &PreprocessedQuestion,
    catalog: &Catalog,
    seed: u64,
) -> (Nqt, CorrectionReport) {
    let mut report = CorrectionReport::default();
    let expected = match infer_expected(tagged, catalog) {
        Ok(e) => e,
        Err(err) => {
            report.skipped = Some(err.to_string());
            report.corrected = Some(nqt.clone());
            return (nqt.clone(), report);
        }
    };
    report.expected = Some(expected.composite.id.clone());
    if !needs_correction(nqt, &expected, question) {
        report.unfilled = dangling_slots(nqt, tagged);
        report.corrected = Some(nqt.clone());
        return (nqt.clone(), report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (aligned, mut edits) = align_subgraphs(nqt, &expected, &mut rng);
    let (refilled, fills, unfilled) = refill(&aligned, tagged, question, &mut rng);
    edits.extend(fills);
    report.edits = edits;
    report.unfilled = unfilled;
    report.corrected = Some(refilled.clone());
    (refilled, report)
}
