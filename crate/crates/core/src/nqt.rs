//! Neural Query Template (NQT) data model and its textual form.
//!
//! An NQT is an ordered list of subject/predicate/object templates. In text
//! each field is separated by `[sep]` and each triple is closed by
//! `[sep_end]`:
//!
//! ```text
//! ans [sep] direct [sep] NER1 [sep_end]
//! ```
//!
//! Variables are written without the leading `?` in this form, while the
//! triple-list notation used in logs and tests keeps it (`(?ans, direct, NER1)`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NqtError {
    #[error("NQT text is empty")]
    EmptyText,
    #[error("NQT must contain at least one triple")]
    NoTriples,
    #[error("malformed NQT: {0}")]
    Malformed(Defect),
    #[error("no salvageable triple in NQT text ({} defects)", .0.len())]
    NothingSalvaged(Vec<Defect>),
    #[error("entity slot index {0} out of range (expected 0, 1 or 2)")]
    SlotIndex(u8),
    #[error("invalid predicate term `{0}`")]
    InvalidPredicate(String),
    #[error("cannot parse triple list `{0}`")]
    TripleList(String),
}

/// A single position in an NQT triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    /// `?ans`, the variable whose bindings answer the question.
    AnsVar,
    /// `?x`, an intermediate variable.
    IntermediateVar,
    /// `NER` (0), `NER1` (1) or `NER2` (2).
    EntitySlot(u8),
    /// Any surface word or phrase (predicate label, class label, entity surface).
    Word(String),
    /// The `rdf:type` keyword.
    RdfType,
    /// Generic relation marker `R` left by correction for predicates still to be filled.
    Relation,
    /// Class marker `C` left by correction for type constraints still to be filled.
    Class,
}

impl Term {
    pub fn word(text: impl Into<String>) -> Self {
        Term::Word(text.into())
    }

    pub fn slot(index: u8) -> Result<Self, NqtError> {
        if index > 2 {
            return Err(NqtError::SlotIndex(index));
        }
        Ok(Term::EntitySlot(index))
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Term::AnsVar | Term::IntermediateVar)
    }

    /// Rendering used inside serialized NQT text.
    pub fn token_form(&self) -> String {
        match self {
            Term::AnsVar => "ans".into(),
            Term::IntermediateVar => "x".into(),
            Term::EntitySlot(0) => "NER".into(),
            Term::EntitySlot(i) => format!("NER{i}"),
            Term::Word(w) => w.clone(),
            Term::RdfType => "rdf:type".into(),
            Term::Relation => "R".into(),
            Term::Class => "C".into(),
        }
    }

    /// Rendering used in triple-list notation.
    pub fn triple_form(&self) -> String {
        match self {
            Term::AnsVar => "?ans".into(),
            Term::IntermediateVar => "?x".into(),
            other => other.token_form(),
        }
    }

    /// Classifies one field of NQT text. Returns `Err` with the offending
    /// token for variable-looking or slot-looking tokens that are not known.
    fn from_field(field: &str) -> Result<Term, String> {
        match field {
            "ans" | "?ans" => return Ok(Term::AnsVar),
            "x" | "?x" => return Ok(Term::IntermediateVar),
            "NER" => return Ok(Term::EntitySlot(0)),
            "NER1" => return Ok(Term::EntitySlot(1)),
            "NER2" => return Ok(Term::EntitySlot(2)),
            "rdf:type" => return Ok(Term::RdfType),
            "R" => return Ok(Term::Relation),
            "C" => return Ok(Term::Class),
            _ => {}
        }
        if field.starts_with('?') {
            return Err(field.to_string());
        }
        if let Some(rest) = field.strip_prefix("NER") {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                return Err(field.to_string());
            }
        }
        Ok(Term::Word(field.to_string()))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.triple_form())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NqtTriple {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl NqtTriple {
    /// Builds a triple, rejecting predicates that are variables or slots.
    pub fn new(subject: Term, predicate: Term, object: Term) -> Result<Self, NqtError> {
        if !matches!(predicate, Term::Word(_) | Term::RdfType | Term::Relation) {
            return Err(NqtError::InvalidPredicate(predicate.token_form()));
        }
        Ok(NqtTriple {
            subject,
            predicate,
            object,
        })
    }

    pub fn is_type_triple(&self) -> bool {
        self.predicate == Term::RdfType
    }

    pub fn terms(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn terms_mut(&mut self) -> [&mut Term; 3] {
        [&mut self.subject, &mut self.predicate, &mut self.object]
    }

    /// Same triple with subject and object exchanged.
    pub fn flipped(&self) -> NqtTriple {
        NqtTriple {
            subject: self.object.clone(),
            predicate: self.predicate.clone(),
            object: self.subject.clone(),
        }
    }
}

impl fmt::Display for NqtTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Nqt {
    triples: Vec<NqtTriple>,
}

impl Nqt {
    pub fn new(triples: Vec<NqtTriple>) -> Result<Self, NqtError> {
        if triples.is_empty() {
            return Err(NqtError::NoTriples);
        }
        Ok(Nqt { triples })
    }

    pub fn triples(&self) -> &[NqtTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn into_triples(self) -> Vec<NqtTriple> {
        self.triples
    }

    /// Parses the triple-list notation, e.g. `[(?ans, affiliation, NER1), (?ans, rdf:type, uni.)]`.
    pub fn from_triple_list(text: &str) -> Result<Self, NqtError> {
        let bad = || NqtError::TripleList(text.to_string());
        let body = text
            .trim()
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(bad)?;
        let mut triples = Vec::new();
        let mut rest = body.trim();
        while !rest.is_empty() {
            let open = rest.strip_prefix('(').ok_or_else(bad)?;
            let close = open.find(')').ok_or_else(bad)?;
            let fields: Vec<&str> = open[..close].split(',').map(str::trim).collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(bad());
            }
            let terms = fields
                .iter()
                .map(|f| Term::from_field(f).map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()?;
            let [s, p, o]: [Term; 3] = terms.try_into().map_err(|_| bad())?;
            triples.push(NqtTriple::new(s, p, o)?);
            rest = open[close + 1..].trim_start();
            rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
        }
        Nqt::new(triples)
    }

    /// Replaces numbered entity slots with the given surfaces (`NERk` takes
    /// `surfaces[k - 1]`). Slots without a surface are left in place.
    pub fn grounded(&self, surfaces: &[String]) -> Nqt {
        let mut out = self.clone();
        for triple in &mut out.triples {
            for term in triple.terms_mut() {
                if let Term::EntitySlot(k) = *term {
                    if k >= 1 {
                        if let Some(s) = surfaces.get(k as usize - 1) {
                            *term = Term::Word(s.clone());
                        }
                    }
                }
            }
        }
        out
    }

    /// Whitespace tokens of the serialized form.
    pub fn tokens(&self, style: SeparatorStyle) -> Vec<String> {
        serialize_nqt(self, style)
            .split_whitespace()
            .map(str::to_string)
            .collect()
    }
}

impl fmt::Display for Nqt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, t) in self.triples.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}

/// Separator tokens used between fields and after each triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeparatorStyle {
    /// `[sep]` / `[sep_end]`
    #[default]
    Sep,
    /// `,` / `.`
    Comma,
}

impl SeparatorStyle {
    pub fn field(self) -> &'static str {
        match self {
            SeparatorStyle::Sep => "[sep]",
            SeparatorStyle::Comma => ",",
        }
    }

    pub fn end(self) -> &'static str {
        match self {
            SeparatorStyle::Sep => "[sep_end]",
            SeparatorStyle::Comma => ".",
        }
    }
}

impl std::str::FromStr for SeparatorStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sep" => Ok(SeparatorStyle::Sep),
            "comma" => Ok(SeparatorStyle::Comma),
            other => Err(format!("unknown separator style `{other}` (expected sep|comma)")),
        }
    }
}

pub fn serialize_nqt(nqt: &Nqt, style: SeparatorStyle) -> String {
    let field = format!(" {} ", style.field());
    nqt.triples
        .iter()
        .map(|t| {
            let body = t.terms().map(Term::token_form).join(&field);
            format!("{body} {}", style.end())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    Strict,
    Lenient,
}

/// Structural problem found while parsing NQT text. `segment` is the
/// zero-based index of the `[sep_end]`-delimited segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Defect {
    WrongArity { segment: usize, fields: usize },
    EmptyField { segment: usize },
    UnknownVariable { segment: usize, token: String },
    InvalidPredicate { segment: usize, token: String },
    Unterminated { segment: usize },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::WrongArity { segment, fields } => {
                write!(f, "segment {segment}: expected 3 fields, found {fields}")
            }
            Defect::EmptyField { segment } => write!(f, "segment {segment}: empty field"),
            Defect::UnknownVariable { segment, token } => {
                write!(f, "segment {segment}: unknown variable `{token}`")
            }
            Defect::InvalidPredicate { segment, token } => {
                write!(f, "segment {segment}: `{token}` cannot be a predicate")
            }
            Defect::Unterminated { segment } => {
                write!(f, "segment {segment}: missing end separator")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedNqt {
    pub nqt: Nqt,
    pub defects: Vec<Defect>,
}

/// Parses serialized NQT text. Strict mode fails on the first defect;
/// lenient mode keeps every well-formed triple and reports the rest.
pub fn parse_nqt(text: &str, style: SeparatorStyle, mode: ParseMode) -> Result<ParsedNqt, NqtError> {
    if text.trim().is_empty() {
        return Err(NqtError::EmptyText);
    }
    let mut segments: Vec<(Vec<&str>, bool)> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for tok in text.split_whitespace() {
        if tok == style.end() {
            segments.push((std::mem::take(&mut current), true));
        } else {
            current.push(tok);
        }
    }
    if !current.is_empty() {
        segments.push((current, false));
    }

    let mut triples = Vec::new();
    let mut defects = Vec::new();
    for (index, (tokens, terminated)) in segments.into_iter().enumerate() {
        let before = defects.len();
        if !terminated {
            defects.push(Defect::Unterminated { segment: index });
        }
        if let Some(triple) = parse_segment(index, &tokens, style, &mut defects) {
            triples.push(triple);
        }
        if mode == ParseMode::Strict && defects.len() > before {
            return Err(NqtError::Malformed(defects.swap_remove(before)));
        }
    }
    if triples.is_empty() {
        return Err(NqtError::NothingSalvaged(defects));
    }
    Ok(ParsedNqt {
        nqt: Nqt { triples },
        defects,
    })
}

fn parse_segment(
    index: usize,
    tokens: &[&str],
    style: SeparatorStyle,
    defects: &mut Vec<Defect>,
) -> Option<NqtTriple> {
    let fields: Vec<String> = tokens
        .split(|t| *t == style.field())
        .map(|f| f.join(" "))
        .collect();
    if fields.len() != 3 {
        defects.push(Defect::WrongArity {
            segment: index,
            fields: fields.len(),
        });
        return None;
    }
    if fields.iter().any(String::is_empty) {
        defects.push(Defect::EmptyField { segment: index });
        return None;
    }
    let mut terms = Vec::with_capacity(3);
    for field in &fields {
        match Term::from_field(field) {
            Ok(t) => terms.push(t),
            Err(token) => {
                defects.push(Defect::UnknownVariable {
                    segment: index,
                    token,
                });
                return None;
            }
        }
    }
    let [subject, predicate, object]: [Term; 3] = terms.try_into().ok()?;
    match NqtTriple::new(subject, predicate, object) {
        Ok(t) => Some(t),
        Err(_) => {
            defects.push(Defect::InvalidPredicate {
                segment: index,
                token: fields[1].clone(),
            });
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Term {
        Term::word(s)
    }

    fn t(s: Term, p: Term, o: Term) -> NqtTriple {
        NqtTriple::new(s, p, o).unwrap()
    }

    #[test]
    fn serializes_university_example() {
        let nqt = Nqt::new(vec![
            t(Term::AnsVar, w("affiliation"), Term::EntitySlot(1)),
            t(Term::AnsVar, w("campus"), Term::EntitySlot(2)),
            t(Term::AnsVar, Term::RdfType, w("uni.")),
        ])
        .unwrap();
        assert_eq!(
            serialize_nqt(&nqt, SeparatorStyle::Sep),
            "ans [sep] affiliation [sep] NER1 [sep_end] ans [sep] campus [sep] NER2 [sep_end] ans [sep] rdf:type [sep] uni. [sep_end]"
        );
    }

    #[test]
    fn serializes_single_triple() {
        let nqt = Nqt::new(vec![t(Term::AnsVar, w("direct"), Term::EntitySlot(1))]).unwrap();
        assert_eq!(
            serialize_nqt(&nqt, SeparatorStyle::Sep),
            "ans [sep] direct [sep] NER1 [sep_end]"
        );
        let words = Nqt::new(vec![t(w("a"), w("b"), w("c"))]).unwrap();
        let text = serialize_nqt(&words, SeparatorStyle::Sep);
        assert_eq!(text, "a [sep] b [sep] c [sep_end]");
        assert_eq!(text.matches("[sep_end]").count(), 1);
    }

    #[test]
    fn comma_style_keeps_dotted_words() {
        let nqt = Nqt::new(vec![
            t(Term::AnsVar, w("affiliation"), Term::EntitySlot(1)),
            t(Term::AnsVar, Term::RdfType, w("uni.")),
        ])
        .unwrap();
        let text = serialize_nqt(&nqt, SeparatorStyle::Comma);
        assert_eq!(text, "ans , affiliation , NER1 . ans , rdf:type , uni. .");
        let back = parse_nqt(&text, SeparatorStyle::Comma, ParseMode::Strict).unwrap();
        assert_eq!(back.nqt, nqt);
    }

    #[test]
    fn parses_intro_example() {
        let parsed = parse_nqt(
            "ans [sep] direct [sep] NER1 [sep_end]",
            SeparatorStyle::Sep,
            ParseMode::Strict,
        )
        .unwrap();
        assert_eq!(
            parsed.nqt.triples(),
            &[t(Term::AnsVar, w("direct"), Term::EntitySlot(1))]
        );
        assert!(parsed.defects.is_empty());
    }

    #[test]
    fn multiword_fields_round_trip() {
        let nqt = Nqt::new(vec![t(Term::AnsVar, w("military unit"), Term::IntermediateVar)]).unwrap();
        let text = serialize_nqt(&nqt, SeparatorStyle::Sep);
        assert_eq!(text, "ans [sep] military unit [sep] x [sep_end]");
        assert_eq!(
            parse_nqt(&text, SeparatorStyle::Sep, ParseMode::Strict).unwrap().nqt,
            nqt
        );
    }

    #[test]
    fn arity_two_segment() {
        let text = "ans [sep] direct [sep_end]";
        let err = parse_nqt(text, SeparatorStyle::Sep, ParseMode::Lenient).unwrap_err();
        assert_eq!(
            err,
            NqtError::NothingSalvaged(vec![Defect::WrongArity { segment: 0, fields: 2 }])
        );
        assert!(matches!(
            parse_nqt(text, SeparatorStyle::Sep, ParseMode::Strict),
            Err(NqtError::Malformed(Defect::WrongArity { .. }))
        ));
    }

    #[test]
    fn arity_violations_enumerated() {
        // Every field count from 1 to 4 except 3, alone and next to a valid triple.
        let good = "ans [sep] director [sep] NER1 [sep_end]";
        for fields in [1usize, 2, 4] {
            let seg = (0..fields)
                .map(|i| format!("f{i}"))
                .collect::<Vec<_>>()
                .join(" [sep] ");
            let bad = format!("{seg} [sep_end]");
            let lone = parse_nqt(&bad, SeparatorStyle::Sep, ParseMode::Lenient).unwrap_err();
            match lone {
                NqtError::NothingSalvaged(d) => assert_eq!(d.len(), 1, "fields={fields}"),
                other => panic!("unexpected {other:?}"),
            }
            for text in [format!("{good} {bad}"), format!("{bad} {good}")] {
                let parsed = parse_nqt(&text, SeparatorStyle::Sep, ParseMode::Lenient).unwrap();
                assert_eq!(parsed.nqt.len(), 1);
                assert_eq!(parsed.defects.len(), 1);
                assert!(matches!(
                    parsed.defects[0],
                    Defect::WrongArity { fields: f, .. } if f == fields
                ));
                assert!(parse_nqt(&text, SeparatorStyle::Sep, ParseMode::Strict).is_err());
            }
        }
    }

    #[test]
    fn lenient_reports_unknown_variables_and_bad_predicates() {
        let text = "y [sep] spouse [sep] ?y [sep_end] ans [sep] NER1 [sep] x [sep_end] NER1 [sep] spouse [sep] NER2 [sep_end] ans [sep] author";
        let parsed = parse_nqt(text, SeparatorStyle::Sep, ParseMode::Lenient).unwrap();
        assert_eq!(parsed.nqt.len(), 1);
        assert_eq!(parsed.defects.len(), 4);
        assert!(matches!(parsed.defects[0], Defect::UnknownVariable { ref token, .. } if token == "?y"));
        assert!(matches!(parsed.defects[1], Defect::InvalidPredicate { .. }));
        assert!(matches!(parsed.defects[2], Defect::Unterminated { segment: 3 }));
    }

    #[test]
    fn unterminated_well_formed_tail_is_salvaged() {
        let parsed = parse_nqt(
            "ans [sep] director [sep] NER1",
            SeparatorStyle::Sep,
            ParseMode::Lenient,
        )
        .unwrap();
        assert_eq!(parsed.nqt.len(), 1);
        assert_eq!(parsed.defects, vec![Defect::Unterminated { segment: 0 }]);
    }

    #[test]
    fn triple_list_notation() {
        let nqt = Nqt::from_triple_list("[(?x, role, NER1), (?ans, military unit, ?x)]").unwrap();
        assert_eq!(nqt.to_string(), "[(?x, role, NER1), (?ans, military unit, ?x)]");
        assert!(Nqt::from_triple_list("[(?x, role)]").is_err());
        assert!(Nqt::from_triple_list("[]").is_err());
    }

    #[test]
    fn grounding_replaces_numbered_slots() {
        let nqt = Nqt::from_triple_list("[(NER1, spouse, NER2), (NER, spouse, ?ans)]").unwrap();
        let g = nqt.grounded(&["Barack Obama".into(), "Michelle Obama".into()]);
        assert_eq!(
            g.to_string(),
            "[(Barack Obama, spouse, Michelle Obama), (NER, spouse, ?ans)]"
        );
    }

    fn arb_node() -> impl Strategy<Value = Term> {
        prop_oneof![
            Just(Term::AnsVar),
            Just(Term::IntermediateVar),
            (0u8..3).prop_map(Term::EntitySlot),
            "[a-z]{1,6}( [a-z]{1,6})?"
                .prop_filter("reserved", |w| w != "x" && w != "ans")
                .prop_map(Term::Word),
            Just(Term::Class),
        ]
    }

    fn arb_predicate() -> impl Strategy<Value = Term> {
        prop_oneof![
            "[a-z]{1,8}( [a-z]{1,6})?"
                .prop_filter("reserved", |w| w != "x" && w != "ans")
                .prop_map(Term::Word),
            Just(Term::RdfType),
            Just(Term::Relation),
        ]
    }

    pub(crate) fn arb_nqt() -> impl Strategy<Value = Nqt> {
        prop::collection::vec(
            (arb_node(), arb_predicate(), arb_node())
                .prop_map(|(s, p, o)| NqtTriple::new(s, p, o).unwrap()),
            1..5,
        )
        .prop_map(|v| Nqt::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip_strict(nqt in arb_nqt(), comma in any::<bool>()) {
            let style = if comma { SeparatorStyle::Comma } else { SeparatorStyle::Sep };
            let text = serialize_nqt(&nqt, style);
            let parsed = parse_nqt(&text, style, ParseMode::Strict).unwrap();
            prop_assert_eq!(&parsed.nqt, &nqt);
            prop_assert!(parsed.defects.is_empty());
            prop_assert_eq!(text.matches(style.end()).count(), nqt.len());
            // 3k fields: each triple contributes exactly two field separators.
            prop_assert_eq!(text.split_whitespace().filter(|t| *t == style.field()).count(), 2 * nqt.len());
        }

        #[test]
        fn triple_list_round_trip(nqt in arb_nqt()) {
            prop_assert_eq!(Nqt::from_triple_list(&nqt.to_string()).unwrap(), nqt);
        }
    }
}
