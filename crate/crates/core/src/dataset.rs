//! Dataset records: LC-QuAD 1.0 and QALD-9 ingestion, and a seeded
//! synthetic grammar with its own fixture triple store.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::nqt::{Nqt, Term};
use crate::preprocess::{preprocess, DictionaryNer, MettLexicon, PreprocessedQuestion};
use crate::sparql::{
    classify_question, iri_label, parse_sparql, select_query_form, sparql_to_nqt, AnswerType, LinkerIndex,
    PatternTerm, QueryForm, SparqlQuery, TriplePattern, TripleStore, RDF_TYPE,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {index}: missing field {field}")]
    MissingField { index: usize, field: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub gold_sparql: String,
    pub gold_nqt: Nqt,
    pub answer_type: AnswerType,
    pub form: QueryForm,
    pub split: Split,
    pub preprocessed: PreprocessedQuestion,
}

/// A record that could not be turned into a training pair, with one reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub exclusions: Vec<Exclusion>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn extend(&mut self, other: Dataset) {
        self.records.extend(other.records);
        self.exclusions.extend(other.exclusions);
    }

    /// Label index built from every gold query (closed world).
    pub fn linker(&self) -> LinkerIndex {
        let mut linker = LinkerIndex::new();
        for r in &self.records {
            if let Ok(q) = parse_sparql(&r.gold_sparql) {
                linker.absorb(&q);
            }
        }
        linker
    }

    /// Tagger lexicon whose properties and classes are the gold NQT words.
    pub fn lexicon(&self) -> MettLexicon {
        let mut properties = BTreeSet::new();
        let mut classes = BTreeSet::new();
        for r in &self.records {
            for t in r.gold_nqt.triples() {
                match (&t.predicate, &t.object) {
                    (Term::RdfType, Term::Word(c)) => {
                        classes.insert(c.clone());
                    }
                    (Term::Word(p), _) => {
                        properties.insert(p.clone());
                    }
                    _ => {}
                }
            }
        }
        MettLexicon::with_vocabulary(properties, classes)
    }

    /// Entity dictionary for raw questions, from every gold entity label.
    pub fn ner_dictionary(&self) -> DictionaryNer {
        let mut ner = DictionaryNer::default();
        for r in &self.records {
            for s in &r.preprocessed.ner_surface {
                ner.insert(s);
            }
        }
        ner
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset is serializable")
    }

    pub fn from_json(text: &str) -> Result<Dataset, DatasetError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Entity labels of a gold query: IRIs in subject/object position that are
/// not classes.
fn entity_labels(query: &SparqlQuery) -> Vec<String> {
    let mut labels = Vec::new();
    for p in &query.patterns {
        let is_type = matches!(&p.predicate, PatternTerm::Iri(i) if i == RDF_TYPE);
        let mut nodes = vec![&p.subject];
        if !is_type {
            nodes.push(&p.object);
        }
        for n in nodes {
            if let PatternTerm::Iri(i) = n {
                let l = iri_label(i);
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
        }
    }
    labels
}

/// Builds a record from a question and its gold query, using the query's
/// entity labels as the NER dictionary.
pub fn make_record(id: &str, question: &str, gold_sparql: &str, split: Split) -> Result<DatasetRecord, String> {
    let query = parse_sparql(gold_sparql).map_err(|e| format!("gold query: {e}"))?;
    let ner = DictionaryNer::new(entity_labels(&query));
    let preprocessed = preprocess(question, &ner).map_err(|e| format!("question: {e}"))?;
    let gold_nqt = sparql_to_nqt(gold_sparql, &preprocessed).map_err(|e| format!("gold NQT: {e}"))?;
    let answer_type = classify_question(question);
    Ok(DatasetRecord {
        id: id.to_string(),
        question: question.to_string(),
        gold_sparql: gold_sparql.to_string(),
        gold_nqt,
        answer_type,
        form: select_query_form(answer_type),
        split,
        preprocessed,
    })
}

fn push_record(dataset: &mut Dataset, id: String, result: Result<DatasetRecord, String>) {
    match result {
        Ok(r) => dataset.records.push(r),
        Err(reason) => {
            warn!("excluded {id}: {reason}");
            dataset.exclusions.push(Exclusion { id, reason });
        }
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn id_string(v: Option<&Value>, index: usize) -> String {
    match v {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => index.to_string(),
    }
}

/// LC-QuAD 1.0 JSON array with `corrected_question`,
/// `intermediary_question` and `sparql_query`.
pub fn parse_lcquad(text: &str, split: Split) -> Result<Dataset, DatasetError> {
    let items: Vec<Value> = serde_json::from_str(text)?;
    let mut dataset = Dataset::default();
    for (index, item) in items.iter().enumerate() {
        let field = |name: &'static str| {
            item.get(name)
                .and_then(Value::as_str)
                .ok_or(DatasetError::MissingField { index, field: name })
        };
        let question = field("corrected_question")?;
        field("intermediary_question")?;
        let sparql = field("sparql_query")?;
        let id = id_string(item.get("_id"), index);
        let result = make_record(&id, question, sparql, split);
        push_record(&mut dataset, id, result);
    }
    Ok(dataset)
}

pub fn load_lcquad(path: impl AsRef<Path>, split: Split) -> Result<Dataset, DatasetError> {
    parse_lcquad(&read(path.as_ref())?, split)
}

/// QALD JSON: `questions[].question[]` (language/string) and `query.sparql`.
/// Only English question strings are used.
pub fn parse_qald(text: &str, split: Split) -> Result<Dataset, DatasetError> {
    let doc: Value = serde_json::from_str(text)?;
    let questions = doc
        .get("questions")
        .and_then(Value::as_array)
        .ok_or(DatasetError::MissingField { index: 0, field: "questions" })?;
    let mut dataset = Dataset::default();
    for (index, item) in questions.iter().enumerate() {
        let id = id_string(item.get("id"), index);
        let variants = item
            .get("question")
            .and_then(Value::as_array)
            .ok_or(DatasetError::MissingField { index, field: "question" })?;
        let sparql = item
            .pointer("/query/sparql")
            .and_then(Value::as_str)
            .ok_or(DatasetError::MissingField { index, field: "query.sparql" })?;
        let english = variants
            .iter()
            .find(|v| v.get("language").and_then(Value::as_str) == Some("en"))
            .and_then(|v| v.get("string").and_then(Value::as_str));
        let result = match english {
            Some(q) => make_record(&id, q, sparql, split),
            None => Err("no English question".to_string()),
        };
        push_record(&mut dataset, id, result);
    }
    Ok(dataset)
}

pub fn load_qald(path: impl AsRef<Path>, split: Split) -> Result<Dataset, DatasetError> {
    parse_qald(&read(path.as_ref())?, split)
}

const DBO: &str = "http://dbpedia.org/ontology/";
const DBR: &str = "http://dbpedia.org/resource/";

/// (label, local name) of the synthetic predicates.
const PREDICATES: [(&str, &str); 12] = [
    ("director", "director"),
    ("composer", "composer"),
    ("spouse", "spouse"),
    ("author", "author"),
    ("publisher", "publisher"),
    ("birth place", "birthPlace"),
    ("military unit", "militaryUnit"),
    ("distributor", "distributor"),
    ("producer", "producer"),
    ("home town", "homeTown"),
    ("owner", "owner"),
    ("founder", "founder"),
];

const CLASSES: [(&str, &str); 6] = [
    ("film", "Film"),
    ("band", "Band"),
    ("book", "Book"),
    ("city", "City"),
    ("company", "Company"),
    ("river", "River"),
];

const FIRST: [&str; 12] = ["Ka", "Ve", "Lo", "Mi", "Da", "Ro", "Su", "Te", "Ba", "Ni", "Fo", "Gu"];
const SECOND: [&str; 10] = ["ran", "lin", "mar", "dox", "vel", "tis", "wen", "por", "gal", "sud"];

/// How a template's triples are laid out. `P1`/`P2` are predicates, `E1`/`E2`
/// the entities in order of appearance in the question.
#[derive(Clone, Copy)]
enum Shape {
    /// (E1, p1, ?ans)
    Out,
    /// (?ans, p1, E1)
    In,
    /// (E1, p1, E2) when `forward`, else (E2, p1, E1)
    Pair { forward: bool },
    /// (?ans, p1, E1), (?ans, p2, E2)
    TwoIn,
    /// (E1, p1, ?ans), (E2, p2, ?ans)
    TwoOut,
    /// (E1, p1, ?x), (?x, p2, ?ans)
    ChainOut,
    /// (?x, p1, E1), (?x, p2, ?ans)
    ChainIn,
}

struct Template {
    text: &'static str,
    shape: Shape,
    class: bool,
}

const fn t(text: &'static str, shape: Shape, class: bool) -> Template {
    Template { text, shape, class }
}

/// Templates per catalog type A..G. `{p}`, `{q}` are predicates, `{c}` a
/// class, `{1}`, `{2}` entities in order of appearance.
const TEMPLATES: [&[Template]; 7] = [
    &[
        t("What is the {p} of {1}?", Shape::Out, false),
        t("Who is the {p} of {1}?", Shape::Out, false),
        t("What has {1} as {p}?", Shape::In, false),
        t("How many things have {1} as {p}?", Shape::In, false),
        t("How many {p} does {1} have?", Shape::Out, false),
    ],
    &[
        t("Is {1} the {p} of {2}?", Shape::Pair { forward: false }, false),
        t("Does {1} have {2} as {p}?", Shape::Pair { forward: true }, false),
    ],
    &[
        t("Which {c} has {p} {1}?", Shape::In, true),
        t("List the {c} whose {p} is {1}.", Shape::In, true),
        t("Which {c} is the {p} of {1}?", Shape::Out, true),
    ],
    &[
        t("What has {p} {1} and {q} {2}?", Shape::TwoIn, false),
        t("Who is the {p} of {1} and the {q} of {2}?", Shape::TwoOut, false),
    ],
    &[
        t("What is the {q} of the {p} of {1}?", Shape::ChainOut, false),
        t("Who is the {q} of the thing whose {p} is {1}?", Shape::ChainIn, false),
    ],
    &[
        t("Which {c} is the {q} of the {p} of {1}?", Shape::ChainOut, true),
        t("Which {c} is the {q} of the thing whose {p} is {1}?", Shape::ChainIn, true),
    ],
    &[
        t("Which {c} has {p} {1} and {q} {2}?", Shape::TwoIn, true),
        t("Which {c} is the {p} of {1} and the {q} of {2}?", Shape::TwoOut, true),
    ],
];

pub const SYNTHETIC_TYPE_IDS: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];

/// Synthetic records plus the store that answers their gold queries.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub store: TripleStore,
    /// Catalog type id each record was generated from.
    pub type_ids: Vec<&'static str>,
}

struct World {
    rng: ChaCha8Rng,
    names: Vec<String>,
    store: TripleStore,
}

impl World {
    fn entity(&mut self) -> String {
        self.names[self.rng.gen_range(0..self.names.len())].clone()
    }

    fn other_than(&mut self, taken: &[&str]) -> String {
        loop {
            let e = self.entity();
            if !taken.contains(&e.as_str()) {
                return e;
            }
        }
    }

    fn fact(&mut self, s: &str, p: &str, o: &str) {
        self.store.insert(ent(s), pred(p), ent(o));
    }

    fn typed(&mut self, s: &str, class: &str) {
        self.store.insert(ent(s), PatternTerm::iri(RDF_TYPE), class_iri(class));
    }
}

fn ent(name: &str) -> PatternTerm {
    PatternTerm::iri(format!("{DBR}{}", name.replace(' ', "_")))
}

fn pred_local(label: &str) -> &'static str {
    PREDICATES.iter().find(|(l, _)| *l == label).map(|(_, local)| *local).unwrap()
}

fn pred(label: &str) -> PatternTerm {
    PatternTerm::iri(format!("{DBO}{}", pred_local(label)))
}

fn class_iri(label: &str) -> PatternTerm {
    let local = CLASSES.iter().find(|(l, _)| *l == label).map(|(_, local)| *local).unwrap();
    PatternTerm::iri(format!("{DBO}{local}"))
}

fn names() -> Vec<String> {
    let mut out = Vec::new();
    for a in FIRST {
        for b in SECOND {
            out.push(format!("{a}{b}"));
        }
    }
    let singles = out.clone();
    for (i, a) in singles.iter().enumerate().step_by(3) {
        let b = &singles[(i * 7 + 5) % singles.len()];
        if a != b {
            out.push(format!("{a} {b}"));
        }
    }
    out
}

/// Generates `n` records with a seeded template grammar. Types cycle
/// through A..G in seed-shuffled blocks so every type appears in any seven
/// consecutive records; each gold query has at least one answer.
pub fn gen_synthetic(seed: u64, n: usize) -> SyntheticCorpus {
    let mut world = World {
        rng: ChaCha8Rng::seed_from_u64(seed),
        names: names(),
        store: TripleStore::new(),
    };
    let mut planned: Vec<(usize, String, String)> = Vec::with_capacity(n);
    let mut type_ids = Vec::with_capacity(n);
    let mut block: Vec<usize> = Vec::new();
    for i in 0..n {
        if block.is_empty() {
            block = (0..7).collect();
            block.shuffle(&mut world.rng);
        }
        let type_index = block.pop().unwrap();
        let templates = TEMPLATES[type_index];
        let template = &templates[world.rng.gen_range(0..templates.len())];
        let (question, sparql) = instantiate(&mut world, template);
        planned.push((i, question, sparql));
        type_ids.push(SYNTHETIC_TYPE_IDS[type_index]);
    }
    let mut dataset = Dataset::default();
    for (i, question, sparql) in planned {
        let id = format!("syn-{i:05}");
        let result = make_record(&id, &question, &sparql, Split::Train);
        push_record(&mut dataset, id, result);
    }
    SyntheticCorpus {
        dataset,
        store: world.store,
        type_ids,
    }
}

/// Marks the last `n_test` records as the test split.
pub fn assign_test_tail(dataset: &mut Dataset, n_test: usize) {
    let n = dataset.records.len();
    for (i, r) in dataset.records.iter_mut().enumerate() {
        r.split = if i + n_test >= n { Split::Test } else { Split::Train };
    }
}

fn instantiate(world: &mut World, template: &Template) -> (String, String) {
    let p_index = world.rng.gen_range(0..PREDICATES.len());
    let mut q_index = world.rng.gen_range(0..PREDICATES.len() - 1);
    if q_index >= p_index {
        q_index += 1;
    }
    let (p, q) = (PREDICATES[p_index].0, PREDICATES[q_index].0);
    let c = CLASSES[world.rng.gen_range(0..CLASSES.len())].0;
    let e1 = world.entity();
    let e2 = world.other_than(&[&e1]);

    let ans = PatternTerm::var("uri");
    let x = PatternTerm::var("x");
    let mut patterns = Vec::new();
    let mut answers: Vec<String> = Vec::new();
    let n_answers = world.rng.gen_range(1..=2);
    let mut form_override = None;

    match template.shape {
        Shape::Out => {
            patterns.push(TriplePattern::new(ent(&e1), pred(p), ans.clone()));
            for _ in 0..n_answers {
                let y = world.other_than(&[&e1]);
                world.fact(&e1, p, &y);
                answers.push(y);
            }
        }
        Shape::In => {
            patterns.push(TriplePattern::new(ans.clone(), pred(p), ent(&e1)));
            for _ in 0..n_answers {
                let y = world.other_than(&[&e1]);
                world.fact(&y, p, &e1);
                answers.push(y);
            }
        }
        Shape::Pair { forward } => {
            let (s, o) = if forward { (&e1, &e2) } else { (&e2, &e1) };
            patterns.push(TriplePattern::new(ent(s), pred(p), ent(o)));
            if world.rng.gen_bool(0.5) {
                let (s, o) = (s.clone(), o.clone());
                world.fact(&s, p, &o);
            }
            form_override = Some(QueryForm::Ask);
        }
        Shape::TwoIn | Shape::TwoOut => {
            let y = world.other_than(&[&e1, &e2]);
            if matches!(template.shape, Shape::TwoIn) {
                patterns.push(TriplePattern::new(ans.clone(), pred(p), ent(&e1)));
                patterns.push(TriplePattern::new(ans.clone(), pred(q), ent(&e2)));
                world.fact(&y, p, &e1);
                world.fact(&y, q, &e2);
            } else {
                patterns.push(TriplePattern::new(ent(&e1), pred(p), ans.clone()));
                patterns.push(TriplePattern::new(ent(&e2), pred(q), ans.clone()));
                world.fact(&e1, p, &y);
                world.fact(&e2, q, &y);
            }
            answers.push(y);
        }
        Shape::ChainOut | Shape::ChainIn => {
            let mid = world.other_than(&[&e1]);
            if matches!(template.shape, Shape::ChainOut) {
                patterns.push(TriplePattern::new(ent(&e1), pred(p), x.clone()));
                world.fact(&e1, p, &mid);
            } else {
                patterns.push(TriplePattern::new(x.clone(), pred(p), ent(&e1)));
                world.fact(&mid, p, &e1);
            }
            patterns.push(TriplePattern::new(x.clone(), pred(q), ans.clone()));
            for _ in 0..n_answers {
                let y = world.other_than(&[&e1, &mid]);
                world.fact(&mid, q, &y);
                answers.push(y);
            }
        }
    }
    if template.class {
        patterns.push(TriplePattern::new(ans.clone(), PatternTerm::iri(RDF_TYPE), class_iri(c)));
        for y in &answers {
            world.typed(y, c);
        }
    }

    let question = template
        .text
        .replace("{p}", p)
        .replace("{q}", q)
        .replace("{c}", c)
        .replace("{1}", &e1)
        .replace("{2}", &e2);
    let form = form_override.unwrap_or_else(|| select_query_form(classify_question(&question)));
    let query = SparqlQuery::new(form, "uri", patterns);
    (question, query.render())
}
