use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::QueryForm;

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

/// Prefixes known to the renderer and parser without a PREFIX declaration.
pub const PREFIXES: [(&str, &str); 6] = [
    ("dbo", "http://dbpedia.org/ontology/"),
    ("dbr", "http://dbpedia.org/resource/"),
    ("dbp", "http://dbpedia.org/property/"),
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
    ("xsd", "http://www.w3.org/2001/XMLSchema#"),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SparqlError {
    #[error("unsupported construct {0}")]
    Unsupported(String),
    #[error("syntax error at token {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown prefix {0:?}")]
    UnknownPrefix(String),
    #[error("query has no triple patterns")]
    NoPatterns,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternTerm {
    Var(String),
    Iri(String),
    Literal {
        lexical: String,
        datatype: Option<String>,
        lang: Option<String>,
    },
}

impl PatternTerm {
    pub fn iri(s: impl Into<String>) -> Self {
        PatternTerm::Iri(s.into())
    }

    pub fn var(s: impl Into<String>) -> Self {
        PatternTerm::Var(s.into())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            PatternTerm::Var(v) => Some(v),
            _ => None,
        }
    }
}

fn is_local_safe(local: &str) -> bool {
    !local.is_empty()
        && !local.ends_with('.')
        && !local.starts_with('.')
        && !local.starts_with('-')
        && local.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Compact form using a known prefix when the local part is safe to print bare.
pub fn compact_iri(iri: &str) -> String {
    for (prefix, ns) in PREFIXES {
        if let Some(local) = iri.strip_prefix(ns) {
            if is_local_safe(local) {
                return format!("{prefix}:{local}");
            }
        }
    }
    format!("<{iri}>")
}

fn escape_literal(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl fmt::Display for PatternTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternTerm::Var(v) => write!(f, "?{v}"),
            PatternTerm::Iri(i) => f.write_str(&compact_iri(i)),
            PatternTerm::Literal { lexical, datatype, lang } => {
                write!(f, "\"{}\"", escape_literal(lexical))?;
                if let Some(l) = lang {
                    write!(f, "@{l}")?;
                } else if let Some(d) = datatype {
                    write!(f, "^^{}", compact_iri(d))?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn new(subject: PatternTerm, predicate: PatternTerm, object: PatternTerm) -> Self {
        TriplePattern { subject, predicate, object }
    }

    pub fn terms(&self) -> [&PatternTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

/// A basic-graph-pattern query in one of the three supported forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparqlQuery {
    pub form: QueryForm,
    /// Projected variable name without `?`; unused by ASK.
    pub answer_var: String,
    /// `SELECT DISTINCT` head.
    pub distinct: bool,
    /// `COUNT(DISTINCT ?v)` rather than `COUNT(?v)`.
    pub count_distinct: bool,
    pub patterns: Vec<TriplePattern>,
}

impl SparqlQuery {
    /// Canonical query with the default head for `form`.
    pub fn new(form: QueryForm, answer_var: impl Into<String>, patterns: Vec<TriplePattern>) -> Self {
        SparqlQuery {
            form,
            answer_var: answer_var.into(),
            distinct: form == QueryForm::SelectDistinct,
            count_distinct: false,
            patterns,
        }
    }

    /// Single-line canonical text using prefixed names.
    pub fn render(&self) -> String {
        let body = self.patterns.iter().map(ToString::to_string).collect::<Vec<_>>().join(" . ");
        let distinct = if self.distinct { "DISTINCT " } else { "" };
        let head = match self.form {
            QueryForm::Ask => "ASK".to_string(),
            QueryForm::SelectDistinct => format!("SELECT {distinct}?{}", self.answer_var),
            QueryForm::SelectCount => {
                let inner = if self.count_distinct { "DISTINCT " } else { "" };
                format!("SELECT {distinct}COUNT({inner}?{})", self.answer_var)
            }
        };
        format!("{head} WHERE {{ {body} }}")
    }

    /// Rendered text preceded by PREFIX declarations for every prefix it uses.
    pub fn executable(&self) -> String {
        let text = self.render();
        let mut out = String::new();
        for (prefix, ns) in PREFIXES {
            if text.contains(&format!("{prefix}:")) {
                out.push_str(&format!("PREFIX {prefix}: <{ns}>\n"));
            }
        }
        out.push_str(&text);
        out
    }

    /// Variables in first-appearance order.
    pub fn variables(&self) -> Vec<String> {
        let mut vars: Vec<String> = Vec::new();
        for p in &self.patterns {
            for t in p.terms() {
                if let PatternTerm::Var(v) = t {
                    if !vars.contains(v) {
                        vars.push(v.clone());
                    }
                }
            }
        }
        vars
    }
}

impl fmt::Display for SparqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Var(String),
    Iri(String),
    Literal(String),
    Punct(char),
    LangTag(String),
    DatatypeMark,
}

fn lex(text: &str) -> Result<Vec<Tok>, SparqlError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |position: usize, message: &str| SparqlError::Syntax {
        position,
        message: message.to_string(),
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '<' {
            let end = chars[i..].iter().position(|&c| c == '>' || c.is_whitespace());
            let Some(end) = end.filter(|&e| chars[i + e] == '>') else {
                toks.push(Tok::Punct('<'));
                i += 1;
                continue;
            };
            toks.push(Tok::Iri(chars[i + 1..i + end].iter().collect()));
            i += end + 1;
        } else if c == '"' || c == '\'' {
            let mut s = String::new();
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None => return Err(err(toks.len(), "unterminated literal")),
                    Some('\\') => {
                        if let Some(&n) = chars.get(j + 1) {
                            s.push(n);
                        }
                        j += 2;
                    }
                    Some(&q) if q == c => break,
                    Some(&other) => {
                        s.push(other);
                        j += 1;
                    }
                }
            }
            toks.push(Tok::Literal(s));
            i = j + 1;
        } else if c == '?' || c == '$' {
            let name: String = chars[i + 1..].iter().take_while(|c| c.is_alphanumeric() || **c == '_').collect();
            if name.is_empty() {
                return Err(err(toks.len(), "empty variable name"));
            }
            i += 1 + name.chars().count();
            toks.push(Tok::Var(name));
        } else if c == '@' {
            let tag: String = chars[i + 1..].iter().take_while(|c| c.is_alphanumeric() || **c == '-').collect();
            i += 1 + tag.chars().count();
            toks.push(Tok::LangTag(tag));
        } else if c == '^' && chars.get(i + 1) == Some(&'^') {
            toks.push(Tok::DatatypeMark);
            i += 2;
        } else if matches!(c, '{' | '}' | '(' | ')' | '.' | ';' | ',' | '*' | '=' | '!' | '<' | '>') {
            toks.push(Tok::Punct(c));
            i += 1;
        } else {
            let mut j = i;
            while j < chars.len() && (chars[j].is_alphanumeric() || matches!(chars[j], '_' | '-' | ':' | '.' | '%')) {
                j += 1;
            }
            if j == i {
                return Err(err(toks.len(), &format!("unexpected character {c:?}")));
            }
            // A trailing '.' terminates the pattern rather than belonging to the name.
            while j > i + 1 && chars[j - 1] == '.' {
                j -= 1;
            }
            toks.push(Tok::Word(chars[i..j].iter().collect()));
            i = j;
        }
    }
    Ok(toks)
}

const UNSUPPORTED_KEYWORDS: [&str; 16] = [
    "FILTER", "OPTIONAL", "UNION", "ORDER", "LIMIT", "OFFSET", "GROUP", "HAVING", "MINUS", "BIND", "VALUES",
    "SERVICE", "GRAPH", "CONSTRUCT", "DESCRIBE", "NOT",
];

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    prefixes: Vec<(String, String)>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn error(&self, message: impl Into<String>) -> SparqlError {
        SparqlError::Syntax {
            position: self.pos,
            message: message.into(),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), SparqlError> {
        match self.next() {
            Some(Tok::Punct(p)) if p == c => Ok(()),
            other => Err(self.error(format!("expected '{c}', found {other:?}"))),
        }
    }

    fn expect_var(&mut self) -> Result<String, SparqlError> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(v),
            Some(Tok::Punct('*')) => Err(SparqlError::Unsupported("SELECT *".into())),
            other => Err(self.error(format!("expected variable, found {other:?}"))),
        }
    }

    fn expand(&self, word: &str) -> Result<String, SparqlError> {
        let (prefix, local) = word.split_once(':').ok_or_else(|| self.error(format!("unexpected word {word:?}")))?;
        self.prefixes
            .iter()
            .rev()
            .find(|(p, _)| p == prefix)
            .map(|(_, ns)| format!("{ns}{local}"))
            .or_else(|| PREFIXES.iter().find(|(p, _)| *p == prefix).map(|(_, ns)| format!("{ns}{local}")))
            .ok_or_else(|| SparqlError::UnknownPrefix(prefix.to_string()))
    }

    fn term(&mut self, predicate_position: bool) -> Result<PatternTerm, SparqlError> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(PatternTerm::Var(v)),
            Some(Tok::Iri(i)) => Ok(PatternTerm::Iri(i)),
            Some(Tok::Word(w)) if predicate_position && w == "a" => Ok(PatternTerm::Iri(RDF_TYPE.into())),
            Some(Tok::Word(w)) if w.contains(':') => Ok(PatternTerm::Iri(self.expand(&w)?)),
            Some(Tok::Word(w)) if w.parse::<f64>().is_ok() => Ok(PatternTerm::Literal {
                lexical: w,
                datatype: None,
                lang: None,
            }),
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false") => {
                Ok(PatternTerm::Literal {
                    lexical: w.to_lowercase(),
                    datatype: None,
                    lang: None,
                })
            }
            Some(Tok::Literal(lexical)) => {
                let (mut datatype, mut lang) = (None, None);
                match self.peek() {
                    Some(Tok::LangTag(_)) => {
                        if let Some(Tok::LangTag(l)) = self.next() {
                            lang = Some(l);
                        }
                    }
                    Some(Tok::DatatypeMark) => {
                        self.pos += 1;
                        match self.next() {
                            Some(Tok::Iri(i)) => datatype = Some(i),
                            Some(Tok::Word(w)) => datatype = Some(self.expand(&w)?),
                            other => return Err(self.error(format!("expected datatype, found {other:?}"))),
                        }
                    }
                    _ => {}
                }
                Ok(PatternTerm::Literal { lexical, datatype, lang })
            }
            Some(Tok::Word(w)) if UNSUPPORTED_KEYWORDS.iter().any(|k| w.eq_ignore_ascii_case(k)) => {
                Err(SparqlError::Unsupported(w.to_uppercase()))
            }
            other => Err(self.error(format!("expected term, found {other:?}"))),
        }
    }

    fn group(&mut self) -> Result<Vec<TriplePattern>, SparqlError> {
        self.expect_punct('{')?;
        let mut patterns = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Punct('}')) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Punct('.')) => {
                    self.pos += 1;
                }
                Some(Tok::Punct('{')) => return Err(SparqlError::Unsupported("nested group".into())),
                Some(Tok::Word(w)) if UNSUPPORTED_KEYWORDS.iter().any(|k| w.eq_ignore_ascii_case(k)) => {
                    return Err(SparqlError::Unsupported(w.to_uppercase()))
                }
                None => return Err(self.error("unterminated group")),
                _ => {
                    let subject = self.term(false)?;
                    let predicate = self.term(true)?;
                    if let PatternTerm::Literal { .. } = predicate {
                        return Err(self.error("literal in predicate position"));
                    }
                    let object = self.term(false)?;
                    patterns.push(TriplePattern { subject, predicate, object });
                    match self.peek() {
                        Some(Tok::Punct(';')) => return Err(SparqlError::Unsupported("predicate list ';'".into())),
                        Some(Tok::Punct(',')) => return Err(SparqlError::Unsupported("object list ','".into())),
                        _ => {}
                    }
                }
            }
        }
        Ok(patterns)
    }
}

/// Parses the supported SPARQL subset: PREFIX declarations, then
/// `ASK [WHERE] {BGP}`, `SELECT [DISTINCT] ?v WHERE {BGP}` or
/// `SELECT [DISTINCT] COUNT([DISTINCT] ?v) WHERE {BGP}` (also the
/// `(COUNT(...) AS ?c)` spelling). Anything else is `Unsupported`.
pub fn parse_sparql(text: &str) -> Result<SparqlQuery, SparqlError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        prefixes: Vec::new(),
    };
    while p.eat_keyword("PREFIX") {
        let name = match p.next() {
            Some(Tok::Word(w)) if w.ends_with(':') => w.trim_end_matches(':').to_string(),
            other => return Err(p.error(format!("expected prefix name, found {other:?}"))),
        };
        let ns = match p.next() {
            Some(Tok::Iri(i)) => i,
            other => return Err(p.error(format!("expected namespace IRI, found {other:?}"))),
        };
        p.prefixes.push((name, ns));
    }
    if p.eat_keyword("BASE") {
        return Err(SparqlError::Unsupported("BASE".into()));
    }

    let (form, answer_var, distinct, count_distinct) = if p.eat_keyword("ASK") {
        (QueryForm::Ask, String::new(), false, false)
    } else if p.eat_keyword("SELECT") {
        let distinct = p.eat_keyword("DISTINCT");
        if p.is_keyword("REDUCED") {
            return Err(SparqlError::Unsupported("REDUCED".into()));
        }
        let aliased = matches!(p.peek(), Some(Tok::Punct('(')));
        if aliased {
            p.pos += 1;
        }
        if p.eat_keyword("COUNT") {
            p.expect_punct('(')?;
            let count_distinct = p.eat_keyword("DISTINCT");
            let var = p.expect_var()?;
            p.expect_punct(')')?;
            if aliased {
                if !p.eat_keyword("AS") {
                    return Err(p.error("expected AS"));
                }
                p.expect_var()?;
                p.expect_punct(')')?;
            }
            (QueryForm::SelectCount, var, distinct, count_distinct)
        } else if aliased {
            return Err(SparqlError::Unsupported("projection expression".into()));
        } else {
            let var = p.expect_var()?;
            if let Some(Tok::Var(_)) = p.peek() {
                return Err(SparqlError::Unsupported("multiple projected variables".into()));
            }
            (QueryForm::SelectDistinct, var, distinct, false)
        }
    } else {
        return match p.peek() {
            Some(Tok::Word(w)) => Err(SparqlError::Unsupported(w.to_uppercase())),
            other => Err(p.error(format!("expected ASK or SELECT, found {other:?}"))),
        };
    };
    p.eat_keyword("WHERE");
    let patterns = p.group()?;
    if let Some(tok) = p.peek() {
        return match tok {
            Tok::Word(w) => Err(SparqlError::Unsupported(w.to_uppercase())),
            other => Err(p.error(format!("trailing input {other:?}"))),
        };
    }
    if patterns.is_empty() {
        return Err(SparqlError::NoPatterns);
    }
    Ok(SparqlQuery {
        form,
        answer_var,
        distinct,
        count_distinct,
        patterns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KUBRICK: &str = "SELECT DISTINCT COUNT(?uri) WHERE {?uri <http://dbpedia.org/ontology/director> <http://dbpedia.org/resource/Stanley_Kubrick>  . }";

    #[test]
    fn parses_lcquad_count_query() {
        let q = parse_sparql(KUBRICK).unwrap();
        assert_eq!(q.form, QueryForm::SelectCount);
        assert_eq!(q.answer_var, "uri");
        assert!(q.distinct);
        assert_eq!(q.patterns.len(), 1);
        assert_eq!(q.patterns[0].object, PatternTerm::iri("http://dbpedia.org/resource/Stanley_Kubrick"));
        assert_eq!(
            q.render(),
            "SELECT DISTINCT COUNT(?uri) WHERE { ?uri dbo:director dbr:Stanley_Kubrick }"
        );
    }

    #[test]
    fn canonical_count_render() {
        let q = SparqlQuery::new(
            QueryForm::SelectCount,
            "uri",
            vec![TriplePattern::new(
                PatternTerm::var("uri"),
                PatternTerm::iri("http://dbpedia.org/ontology/director"),
                PatternTerm::iri("http://dbpedia.org/resource/Stanley_Kubrick"),
            )],
        );
        assert_eq!(q.render(), "SELECT COUNT(?uri) WHERE { ?uri dbo:director dbr:Stanley_Kubrick }");
        assert_eq!(
            q.executable(),
            "PREFIX dbo: <http://dbpedia.org/ontology/>\nPREFIX dbr: <http://dbpedia.org/resource/>\nSELECT COUNT(?uri) WHERE { ?uri dbo:director dbr:Stanley_Kubrick }"
        );
    }

    #[test]
    fn parses_prefixes_a_and_literals() {
        let q = parse_sparql(
            "PREFIX ex: <http://ex.org/> ASK { ex:A a ex:City ; } ",
        );
        assert_eq!(q, Err(SparqlError::Unsupported("predicate list ';'".into())));
        let q = parse_sparql("PREFIX ex: <http://ex.org/> ASK { ex:A a ex:City . ex:A ex:pop \"12\"^^xsd:integer . ex:A ex:name 'A'@en }").unwrap();
        assert_eq!(q.form, QueryForm::Ask);
        assert_eq!(q.patterns[0].predicate, PatternTerm::iri(RDF_TYPE));
        assert_eq!(q.patterns[0].object, PatternTerm::iri("http://ex.org/City"));
        assert_eq!(
            q.patterns[1].object,
            PatternTerm::Literal {
                lexical: "12".into(),
                datatype: Some("http://www.w3.org/2001/XMLSchema#integer".into()),
                lang: None
            }
        );
        assert_eq!(parse_sparql(&q.render()).unwrap(), q);
    }

    #[test]
    fn rejects_unsupported() {
        for (text, what) in [
            ("SELECT ?x WHERE { ?x dbo:p ?y . FILTER(?y > 3) }", "FILTER"),
            ("SELECT ?x WHERE { ?x dbo:p ?y } ORDER BY ?y", "ORDER"),
            ("SELECT ?x WHERE { ?x dbo:p ?y } LIMIT 1", "LIMIT"),
            ("SELECT ?x WHERE { OPTIONAL { ?x dbo:p ?y } }", "OPTIONAL"),
            ("CONSTRUCT { ?x dbo:p ?y } WHERE { ?x dbo:p ?y }", "CONSTRUCT"),
        ] {
            assert_eq!(parse_sparql(text), Err(SparqlError::Unsupported(what.into())), "{text}");
        }
        assert_eq!(parse_sparql("ASK { }"), Err(SparqlError::NoPatterns));
        assert_eq!(parse_sparql("ASK { foo:a foo:b foo:c }"), Err(SparqlError::UnknownPrefix("foo".into())));
        assert!(matches!(parse_sparql("SELECT ?x WHERE { ?x dbo:p"), Err(SparqlError::Syntax { .. })));
    }

    #[test]
    fn aliased_count() {
        let q = parse_sparql("SELECT (COUNT(DISTINCT ?uri) AS ?c) WHERE { ?uri dbo:p dbr:X }").unwrap();
        assert_eq!(q.form, QueryForm::SelectCount);
        assert!(q.count_distinct);
        assert!(!q.distinct);
    }

    #[test]
    fn unsafe_locals_use_full_iri() {
        assert_eq!(compact_iri("http://dbpedia.org/resource/St._Louis"), "dbr:St._Louis");
        assert_eq!(compact_iri("http://dbpedia.org/resource/Inc."), "<http://dbpedia.org/resource/Inc.>");
        assert_eq!(compact_iri("http://dbpedia.org/resource/A_(film)"), "<http://dbpedia.org/resource/A_(film)>");
    }

    fn arb_iri() -> impl Strategy<Value = String> {
        prop_oneof![
            "[A-Za-z][A-Za-z0-9_]{0,8}".prop_map(|l| format!("http://dbpedia.org/resource/{l}")),
            "[a-z][A-Za-z]{0,8}".prop_map(|l| format!("http://dbpedia.org/ontology/{l}")),
            "[A-Za-z(),._]{1,8}".prop_map(|l| format!("http://example.org/{l}")),
        ]
    }

    fn arb_term() -> impl Strategy<Value = PatternTerm> {
        prop_oneof![
            "[a-z][a-z0-9]{0,3}".prop_map(PatternTerm::Var),
            arb_iri().prop_map(PatternTerm::Iri),
            ("[ -~]{0,6}", proptest::option::of("[a-z]{2}")).prop_map(|(lexical, lang)| PatternTerm::Literal {
                lexical,
                datatype: None,
                lang
            }),
        ]
    }

    fn arb_query() -> impl Strategy<Value = SparqlQuery> {
        let pattern = (arb_term(), arb_iri(), arb_term())
            .prop_map(|(s, p, o)| TriplePattern::new(s, PatternTerm::Iri(p), o));
        (
            prop_oneof![
                Just(QueryForm::Ask),
                Just(QueryForm::SelectCount),
                Just(QueryForm::SelectDistinct)
            ],
            any::<bool>(),
            any::<bool>(),
            proptest::collection::vec(pattern, 1..4),
        )
            .prop_map(|(form, distinct, count_distinct, patterns)| SparqlQuery {
                form,
                answer_var: if form == QueryForm::Ask { String::new() } else { "uri".into() },
                distinct: distinct && form != QueryForm::Ask,
                count_distinct: count_distinct && form == QueryForm::SelectCount,
                patterns,
            })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(q in arb_query()) {
            let text = q.render();
            prop_assert_eq!(parse_sparql(&text).unwrap(), q.clone());
            prop_assert_eq!(parse_sparql(&q.executable()).unwrap(), q);
        }
    }
}
