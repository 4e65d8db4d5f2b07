use thiserror::Error;

use super::linker::{iri_label, normalize_label, predicate_label, LinkError};
use super::query::{parse_sparql, PatternTerm, SparqlError, SparqlQuery, TriplePattern, RDF_TYPE};
use super::{LinkerIndex, QueryForm};
use crate::nqt::{Nqt, NqtTriple, Term};
use crate::preprocess::PreprocessedQuestion;

/// Variable name used for `?ans` in generated queries.
pub const ANSWER_VAR: &str = "uri";
const INTERMEDIATE_VAR: &str = "x";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConvertError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Sparql(#[from] SparqlError),
    #[error("{0} has no grounding")]
    Unground(String),
    #[error("entity slot NER{0} has no surface in the question")]
    MissingSurface(u8),
    #[error("predicate variables are not supported")]
    PredicateVariable,
    #[error("literal {0:?} cannot be templated")]
    Literal(String),
    #[error("more than one non-answer variable: {0:?}")]
    TooManyVariables(Vec<String>),
    #[error("entity {0:?} does not occur in the question")]
    EntityNotInQuestion(String),
    #[error("entity {0:?} would need slot NER{1}")]
    TooManyEntities(String, usize),
}

fn link_node(term: &Term, linker: &LinkerIndex, ner_surface: &[String]) -> Result<PatternTerm, ConvertError> {
    match term {
        Term::AnsVar => Ok(PatternTerm::var(ANSWER_VAR)),
        Term::IntermediateVar => Ok(PatternTerm::var(INTERMEDIATE_VAR)),
        Term::EntitySlot(k @ 1..=2) => {
            let surface = ner_surface.get(*k as usize - 1).ok_or(ConvertError::MissingSurface(*k))?;
            Ok(PatternTerm::iri(linker.link_entity(surface)?))
        }
        Term::Word(w) => Ok(PatternTerm::iri(linker.link_entity(w)?)),
        other => Err(ConvertError::Unground(other.triple_form())),
    }
}

/// Builds an executable query from an NQT. Entity slots are grounded via
/// `ner_surface`, words are linked by label.
pub fn nqt_to_sparql(
    nqt: &Nqt,
    form: QueryForm,
    linker: &LinkerIndex,
    ner_surface: &[String],
) -> Result<SparqlQuery, ConvertError> {
    let mut patterns = Vec::with_capacity(nqt.len());
    for t in nqt.triples() {
        let subject = link_node(&t.subject, linker, ner_surface)?;
        let (predicate, object) = match &t.predicate {
            Term::RdfType => {
                let object = match &t.object {
                    Term::Word(w) => PatternTerm::iri(linker.link_class(w)?),
                    other => link_node(other, linker, ner_surface)?,
                };
                (PatternTerm::iri(RDF_TYPE), object)
            }
            Term::Word(w) => (
                PatternTerm::iri(linker.link_predicate(w)?),
                link_node(&t.object, linker, ner_surface)?,
            ),
            other => return Err(ConvertError::Unground(other.triple_form())),
        };
        patterns.push(TriplePattern::new(subject, predicate, object));
    }
    Ok(SparqlQuery::new(form, ANSWER_VAR, patterns))
}

/// Derives the gold NQT of a gold query: the projected variable becomes
/// `?ans`, one other variable `?x`, entities found in the question become
/// NER slots by order of appearance, predicates become their local-name words.
pub fn sparql_to_nqt(gold: &str, question: &PreprocessedQuestion) -> Result<Nqt, ConvertError> {
    let query = parse_sparql(gold)?;
    let answer_var = (query.form != QueryForm::Ask).then_some(query.answer_var.as_str());
    let others: Vec<String> = query
        .variables()
        .into_iter()
        .filter(|v| Some(v.as_str()) != answer_var)
        .collect();
    if others.len() > 1 {
        return Err(ConvertError::TooManyVariables(others));
    }
    let surfaces: Vec<String> = question.ner_surface.iter().map(|s| normalize_label(s)).collect();

    let node = |term: &PatternTerm| -> Result<Term, ConvertError> {
        match term {
            PatternTerm::Var(v) if Some(v.as_str()) == answer_var => Ok(Term::AnsVar),
            PatternTerm::Var(_) => Ok(Term::IntermediateVar),
            PatternTerm::Iri(iri) => {
                let label = iri_label(iri);
                let index = surfaces
                    .iter()
                    .position(|s| *s == normalize_label(&label))
                    .ok_or_else(|| ConvertError::EntityNotInQuestion(label.clone()))?;
                if index >= 2 {
                    return Err(ConvertError::TooManyEntities(label, index + 1));
                }
                Ok(Term::EntitySlot(index as u8 + 1))
            }
            PatternTerm::Literal { lexical, .. } => Err(ConvertError::Literal(lexical.clone())),
        }
    };

    let mut triples = Vec::with_capacity(query.patterns.len());
    for p in &query.patterns {
        let pred_iri = match &p.predicate {
            PatternTerm::Iri(i) => i,
            PatternTerm::Var(_) => return Err(ConvertError::PredicateVariable),
            PatternTerm::Literal { lexical, .. } => return Err(ConvertError::Literal(lexical.clone())),
        };
        let subject = node(&p.subject)?;
        let triple = if pred_iri == RDF_TYPE {
            let object = match &p.object {
                PatternTerm::Iri(c) => Term::Word(predicate_label(c)),
                other => node(other)?,
            };
            NqtTriple { subject, predicate: Term::RdfType, object }
        } else {
            NqtTriple {
                subject,
                predicate: Term::Word(predicate_label(pred_iri)),
                object: node(&p.object)?,
            }
        };
        triples.push(triple);
    }
    Ok(Nqt::new(triples).map_err(|_| SparqlError::NoPatterns)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{preprocess, DictionaryNer};

    fn kubrick() -> PreprocessedQuestion {
        preprocess(
            "How many movies did Stanley Kubrick direct?",
            &DictionaryNer::new(["Stanley Kubrick"]),
        )
        .unwrap()
    }

    fn linker() -> LinkerIndex {
        let mut l = LinkerIndex::new();
        l.add_entity("Stanley Kubrick", "http://dbpedia.org/resource/Stanley_Kubrick");
        l.add_predicate("director", "http://dbpedia.org/ontology/director");
        l.add_class("film", "http://dbpedia.org/ontology/Film");
        l
    }

    #[test]
    fn kubrick_nqt_to_sparql() {
        let nqt = Nqt::from_triple_list("[(?ans, director, Stanley Kubrick)]").unwrap();
        let q = nqt_to_sparql(&nqt, QueryForm::SelectCount, &linker(), &[]).unwrap();
        assert_eq!(q.render(), "SELECT COUNT(?uri) WHERE { ?uri dbo:director dbr:Stanley_Kubrick }");
        let slotted = Nqt::from_triple_list("[(?ans, director, NER1)]").unwrap();
        let q2 = nqt_to_sparql(&slotted, QueryForm::SelectCount, &linker(), &kubrick().ner_surface).unwrap();
        assert_eq!(q2, q);
    }

    #[test]
    fn type_triples_link_classes() {
        let nqt = Nqt::from_triple_list("[(?ans, director, NER1), (?ans, rdf:type, films)]").unwrap();
        let q = nqt_to_sparql(&nqt, QueryForm::SelectDistinct, &linker(), &kubrick().ner_surface).unwrap();
        assert_eq!(
            q.render(),
            "SELECT DISTINCT ?uri WHERE { ?uri dbo:director dbr:Stanley_Kubrick . ?uri rdf:type dbo:Film }"
        );
    }

    #[test]
    fn unlinkable_terms_error() {
        let nqt = Nqt::from_triple_list("[(?ans, producer, NER1)]").unwrap();
        let err = nqt_to_sparql(&nqt, QueryForm::SelectDistinct, &linker(), &kubrick().ner_surface).unwrap_err();
        match err {
            ConvertError::Link(e) => assert_eq!(e.candidates, vec!["director".to_string()]),
            other => panic!("{other:?}"),
        }
        let nqt = Nqt::from_triple_list("[(?ans, R, NER)]").unwrap();
        assert!(matches!(
            nqt_to_sparql(&nqt, QueryForm::SelectDistinct, &linker(), &[]),
            Err(ConvertError::Unground(_))
        ));
        let nqt = Nqt::from_triple_list("[(?ans, director, NER2)]").unwrap();
        assert_eq!(
            nqt_to_sparql(&nqt, QueryForm::SelectDistinct, &linker(), &kubrick().ner_surface),
            Err(ConvertError::MissingSurface(2))
        );
    }

    #[test]
    fn kubrick_gold_to_nqt() {
        let gold = "SELECT DISTINCT COUNT(?uri) WHERE {?uri <http://dbpedia.org/ontology/director> <http://dbpedia.org/resource/Stanley_Kubrick>  . }";
        let nqt = sparql_to_nqt(gold, &kubrick()).unwrap();
        assert_eq!(nqt.to_string(), "[(?ans, director, NER1)]");
    }

    #[test]
    fn ask_with_two_entities() {
        let q = preprocess("Is Ada the spouse of Bob?", &DictionaryNer::new(["Ada", "Bob"])).unwrap();
        let nqt = sparql_to_nqt("ASK { dbr:Ada dbo:spouse dbr:Bob }", &q).unwrap();
        assert_eq!(nqt.to_string(), "[(NER1, spouse, NER2)]");
        let swapped = preprocess("Is Bob the spouse of Ada?", &DictionaryNer::new(["Ada", "Bob"])).unwrap();
        let nqt = sparql_to_nqt("ASK { dbr:Ada dbo:spouse dbr:Bob }", &swapped).unwrap();
        assert_eq!(nqt.to_string(), "[(NER2, spouse, NER1)]");
    }

    #[test]
    fn gold_conversion_errors() {
        let q = kubrick();
        assert_eq!(
            sparql_to_nqt("SELECT ?uri WHERE { }", &q),
            Err(ConvertError::Sparql(SparqlError::NoPatterns))
        );
        assert!(matches!(
            sparql_to_nqt("SELECT ?uri WHERE { ?uri dbo:director dbr:Orson_Welles }", &q),
            Err(ConvertError::EntityNotInQuestion(_))
        ));
        assert!(matches!(
            sparql_to_nqt("SELECT ?uri WHERE { ?uri ?p dbr:Stanley_Kubrick }", &q),
            Err(ConvertError::PredicateVariable)
        ));
        assert!(matches!(
            sparql_to_nqt("SELECT ?uri WHERE { ?uri dbo:a ?x . ?x dbo:b ?y }", &q),
            Err(ConvertError::TooManyVariables(_))
        ));
        assert!(matches!(
            sparql_to_nqt("SELECT ?uri WHERE { ?uri dbo:a \"3\" }", &q),
            Err(ConvertError::Literal(_))
        ));
        assert!(matches!(
            sparql_to_nqt("SELECT ?uri WHERE { ?uri dbo:a ?x FILTER(?x) }", &q),
            Err(ConvertError::Sparql(SparqlError::Unsupported(_)))
        ));
    }

    #[test]
    fn two_hop_with_type() {
        let q = preprocess(
            "Who was in the military unit which played the role of Air interdiction",
            &DictionaryNer::new(["Air interdiction"]),
        )
        .unwrap();
        let gold = "SELECT DISTINCT ?uri WHERE { ?x dbo:role dbr:Air_interdiction . ?uri dbo:militaryUnit ?x . ?uri rdf:type dbo:Person }";
        let nqt = sparql_to_nqt(gold, &q).unwrap();
        assert_eq!(
            nqt.to_string(),
            "[(?x, role, NER1), (?ans, military unit, ?x), (?ans, rdf:type, person)]"
        );
    }
}
