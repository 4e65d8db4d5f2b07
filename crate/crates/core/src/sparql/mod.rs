//! SPARQL side of the pipeline: answer-type classification, query forms,
//! NQT/SPARQL conversion, query execution and answer filtering.

mod convert;
mod endpoint;
mod linker;
pub mod mock;
mod query;
mod store;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use convert::{nqt_to_sparql, sparql_to_nqt, ConvertError, ANSWER_VAR};
pub use endpoint::{execute_all, parse_results, EndpointError, HttpEndpoint, DEFAULT_MAX_IN_FLIGHT};
pub use linker::{iri_label, local_name, normalize_label, predicate_label, LinkError, LinkRole, LinkerIndex};
pub use query::{compact_iri, parse_sparql, PatternTerm, SparqlError, SparqlQuery, TriplePattern, PREFIXES, RDF_TYPE};
pub use store::{QueryBackend, StoreError, TripleStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Boolean,
    Number,
    Person,
    Place,
    Date,
    Thing,
}

impl AnswerType {
    pub const ALL: [AnswerType; 6] = [
        AnswerType::Boolean,
        AnswerType::Number,
        AnswerType::Person,
        AnswerType::Place,
        AnswerType::Date,
        AnswerType::Thing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::Boolean => "boolean",
            AnswerType::Number => "number",
            AnswerType::Person => "person",
            AnswerType::Place => "place",
            AnswerType::Date => "date",
            AnswerType::Thing => "thing",
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryForm {
    Ask,
    SelectCount,
    SelectDistinct,
}

impl fmt::Display for QueryForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryForm::Ask => "ASK",
            QueryForm::SelectCount => "SELECT_COUNT",
            QueryForm::SelectDistinct => "SELECT_DISTINCT",
        })
    }
}

impl FromStr for QueryForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ASK" => Ok(QueryForm::Ask),
            "SELECT_COUNT" => Ok(QueryForm::SelectCount),
            "SELECT_DISTINCT" => Ok(QueryForm::SelectDistinct),
            other => Err(format!("unknown query form {other:?}")),
        }
    }
}

const AUXILIARIES: [&str; 6] = ["is", "are", "did", "does", "was", "were"];

/// Rule-table classification on interrogative words. Total: anything that
/// matches no rule is `Thing`.
pub fn classify_question(question: &str) -> AnswerType {
    let words: Vec<String> = question
        .split(|c: char| c.is_whitespace() || matches!(c, '?' | ',' | '.' | '!'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let has_bigram = |a: &str, b: &str| words.windows(2).any(|w| w[0] == a && w[1] == b);
    match words.first().map(String::as_str) {
        Some(w) if AUXILIARIES.contains(&w) => return AnswerType::Boolean,
        _ => {}
    }
    if has_bigram("how", "many") || words.iter().any(|w| w == "count") {
        return AnswerType::Number;
    }
    if has_bigram("what", "year") {
        return AnswerType::Date;
    }
    for w in &words {
        match w.as_str() {
            "who" | "whom" => return AnswerType::Person,
            "where" => return AnswerType::Place,
            "when" => return AnswerType::Date,
            _ => {}
        }
    }
    AnswerType::Thing
}

pub fn select_query_form(answer_type: AnswerType) -> QueryForm {
    match answer_type {
        AnswerType::Boolean => QueryForm::Ask,
        AnswerType::Number => QueryForm::SelectCount,
        _ => QueryForm::SelectDistinct,
    }
}

/// Result of executing a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answers {
    Boolean(bool),
    /// Binding values of the answer variable (a single count for COUNT queries).
    Values(Vec<String>),
}

impl Answers {
    pub fn empty() -> Self {
        Answers::Values(Vec::new())
    }

    pub fn to_set(&self) -> BTreeSet<String> {
        match self {
            Answers::Boolean(b) => BTreeSet::from([b.to_string()]),
            Answers::Values(v) => v.iter().cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Answers::Boolean(_) => 1,
            Answers::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn date_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^-?[0-9]{4}-[0-9]{2}-[0-9]{2}(T[0-9]{2}:[0-9]{2}(:[0-9]{2}(\.[0-9]+)?)?(Z|[+-][0-9]{2}:[0-9]{2})?)?$").unwrap()
    })
}

pub fn is_date_literal(value: &str) -> bool {
    date_regex().is_match(value)
}

pub fn is_numeric_literal(value: &str) -> bool {
    !value.is_empty() && value.parse::<f64>().is_ok_and(f64::is_finite)
}

/// Keeps the answers whose shape fits the expected answer type.
pub fn filter_answers(answers: &Answers, answer_type: AnswerType) -> Answers {
    match (answers, answer_type) {
        (Answers::Boolean(_), _) | (_, AnswerType::Boolean) => answers.clone(),
        (Answers::Values(v), AnswerType::Number) => {
            Answers::Values(v.iter().filter(|a| is_numeric_literal(a)).cloned().collect())
        }
        (Answers::Values(v), AnswerType::Date) => {
            Answers::Values(v.iter().filter(|a| is_date_literal(a)).cloned().collect())
        }
        (Answers::Values(_), _) => answers.clone(),
    }
}
