use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use super::query::{PatternTerm, SparqlQuery};
use super::{Answers, EndpointError, QueryForm};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Anything that can answer a [`SparqlQuery`].
pub trait QueryBackend {
    fn execute(&self, query: &SparqlQuery) -> Result<Answers, EndpointError>;
}

type Node = PatternTerm;

/// In-memory fixture store evaluating basic graph patterns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripleStore {
    triples: Vec<[Node; 3]>,
    seen: BTreeSet<[Node; 3]>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a ground triple; duplicates are ignored. Variables are rejected.
    pub fn insert(&mut self, s: Node, p: Node, o: Node) -> bool {
        if [&s, &p, &o].iter().any(|t| matches!(t, PatternTerm::Var(_))) {
            return false;
        }
        let t = [s, p, o];
        if self.seen.insert(t.clone()) {
            self.triples.push(t);
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = &[Node; 3]> {
        self.triples.iter()
    }

    /// Parses `s p o .` lines. Terms are `<iri>`, known-prefix names or
    /// quoted literals; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut store = TripleStore::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| StoreError::Syntax { line: i + 1, message };
            let body = line.strip_suffix('.').ok_or_else(|| err("missing terminating '.'".into()))?;
            let query = super::parse_sparql(&format!("ASK {{ {body} }}")).map_err(|e| err(e.to_string()))?;
            if query.patterns.len() != 1 {
                return Err(err("expected exactly one triple".into()));
            }
            let p = query.patterns.into_iter().next().unwrap();
            if p.terms().iter().any(|t| t.as_var().is_some()) {
                return Err(err("variables are not allowed in fixture data".into()));
            }
            store.insert(p.subject, p.predicate, p.object);
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for [s, p, o] in &self.triples {
            let _ = writeln!(out, "{s} {p} {o} .");
        }
        out
    }

    fn matches(&self, pattern: &[&Node; 3], binding: &HashMap<String, Node>) -> Vec<HashMap<String, Node>> {
        let mut out = Vec::new();
        'triples: for t in &self.triples {
            let mut b = binding.clone();
            for (pat, val) in pattern.iter().zip(t.iter()) {
                match pat {
                    PatternTerm::Var(v) => match b.get(v) {
                        Some(bound) if bound != val => continue 'triples,
                        Some(_) => {}
                        None => {
                            b.insert(v.clone(), val.clone());
                        }
                    },
                    ground if *ground != val => continue 'triples,
                    _ => {}
                }
            }
            out.push(b);
        }
        out
    }

    /// All solutions of the query's BGP.
    pub fn solutions(&self, query: &SparqlQuery) -> Vec<HashMap<String, Node>> {
        let mut solutions = vec![HashMap::new()];
        for p in &query.patterns {
            let pattern = [&p.subject, &p.predicate, &p.object];
            solutions = solutions.iter().flat_map(|b| self.matches(&pattern, b)).collect();
            if solutions.is_empty() {
                break;
            }
        }
        solutions
    }

    pub fn evaluate(&self, query: &SparqlQuery) -> Answers {
        let solutions = self.solutions(query);
        let value = |n: &Node| match n {
            PatternTerm::Iri(i) => i.clone(),
            PatternTerm::Literal { lexical, .. } => lexical.clone(),
            PatternTerm::Var(v) => v.clone(),
        };
        let bound: Vec<String> = solutions.iter().filter_map(|b| b.get(&query.answer_var)).map(value).collect();
        match query.form {
            QueryForm::Ask => Answers::Boolean(!solutions.is_empty()),
            QueryForm::SelectCount => {
                let n = if query.count_distinct {
                    bound.iter().collect::<BTreeSet<_>>().len()
                } else {
                    bound.len()
                };
                Answers::Values(vec![n.to_string()])
            }
            QueryForm::SelectDistinct => {
                if query.distinct {
                    let mut seen = BTreeSet::new();
                    Answers::Values(bound.into_iter().filter(|v| seen.insert(v.clone())).collect())
                } else {
                    Answers::Values(bound)
                }
            }
        }
    }
}

impl QueryBackend for TripleStore {
    fn execute(&self, query: &SparqlQuery) -> Result<Answers, EndpointError> {
        Ok(self.evaluate(query))
    }
}
