//! Question preprocessing: tokenization, entity slotting and multi-entity-type tagging.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NER_TOKEN: &str = "NER";

const TERMINAL_PUNCTUATION: &[char] = &['?', ',', '.', '!'];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PreprocessError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("entity spans {0:?} and {1:?} overlap")]
    OverlappingSpans(Range<usize>, Range<usize>),
    #[error("entity span {span:?} out of range for {len} tokens")]
    SpanOutOfRange { span: Range<usize>, len: usize },
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
}

/// Splits on whitespace and detaches trailing `? , . !` as separate tokens.
/// Case is preserved.
pub fn split_tokens(question: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in question.split_whitespace() {
        let body = raw.trim_end_matches(TERMINAL_PUNCTUATION);
        if !body.is_empty() {
            out.push(body.to_string());
        }
        out.extend(raw[body.len()..].chars().map(String::from));
    }
    out
}

fn normalize_case(index: usize, token: &str) -> String {
    let capitalized = token.chars().next().is_some_and(char::is_uppercase);
    if token == NER_TOKEN || (index > 0 && capitalized) {
        token.to_string()
    } else {
        token.to_lowercase()
    }
}

/// Whitespace tokenization with punctuation detached. Tokens are lowercased
/// except capitalized words after the first position, which are taken to be
/// (parts of) entity surfaces.
pub fn tokenize(question: &str) -> Result<Vec<String>, PreprocessError> {
    let tokens = split_tokens(question);
    if tokens.is_empty() {
        return Err(PreprocessError::EmptyQuestion);
    }
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(i, t)| normalize_case(i, t))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessedQuestion {
    /// Model-facing tokens: entity spans collapsed to `NER`, everything else lowercased.
    pub tokens: Vec<String>,
    /// Same positions as `tokens`, original casing.
    pub surface_tokens: Vec<String>,
    /// Original text of each entity span, in order of appearance.
    pub ner_surface: Vec<String>,
    pub raw: String,
}

impl PreprocessedQuestion {
    /// Re-expands every `NER` token into its recorded surface tokens.
    pub fn expanded_tokens(&self) -> Vec<String> {
        let mut surfaces = self.ner_surface.iter();
        let mut out = Vec::new();
        for (tok, surface) in self.tokens.iter().zip(&self.surface_tokens) {
            if tok == NER_TOKEN {
                if let Some(s) = surfaces.next() {
                    out.extend(s.split(' ').map(str::to_string));
                    continue;
                }
            }
            out.push(surface.clone());
        }
        out
    }

    /// Lowercased words of the original question, entity surfaces included.
    pub fn word_set(&self) -> HashSet<String> {
        split_tokens(&self.raw)
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect()
    }

    /// Whether every word of `phrase` occurs in the question (case-insensitive).
    pub fn contains_phrase(&self, phrase: &str) -> bool {
        let words = self.word_set();
        let mut parts = phrase.split_whitespace().peekable();
        parts.peek().is_some() && parts.all(|p| words.contains(&p.to_lowercase()))
    }
}

/// Collapses each entity span into a single `NER` token. Tokens are kept as given.
pub fn ner_substitute(
    tokens: &[String],
    entity_spans: &[Range<usize>],
) -> Result<PreprocessedQuestion, PreprocessError> {
    let mut spans = entity_spans.to_vec();
    spans.sort_by_key(|s| (s.start, s.end));
    for s in &spans {
        if s.start >= s.end || s.end > tokens.len() {
            return Err(PreprocessError::SpanOutOfRange {
                span: s.clone(),
                len: tokens.len(),
            });
        }
    }
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(PreprocessError::OverlappingSpans(pair[0].clone(), pair[1].clone()));
        }
    }

    let mut out = Vec::with_capacity(tokens.len());
    let mut ner_surface = Vec::with_capacity(spans.len());
    let mut next = 0;
    for span in &spans {
        out.extend_from_slice(&tokens[next..span.start]);
        out.push(NER_TOKEN.to_string());
        ner_surface.push(tokens[span.clone()].join(" "));
        next = span.end;
    }
    out.extend_from_slice(&tokens[next..]);
    Ok(PreprocessedQuestion {
        surface_tokens: out.clone(),
        tokens: out,
        ner_surface,
        raw: tokens.join(" "),
    })
}

/// Source of entity spans over case-preserved tokens.
pub trait EntityProvider {
    fn spans(&self, tokens: &[String]) -> Vec<Range<usize>>;
}

/// Greedy longest-match dictionary of entity labels, case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct DictionaryNer {
    labels: HashSet<Vec<String>>,
    max_len: usize,
}

impl DictionaryNer {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut ner = DictionaryNer::default();
        for l in labels {
            ner.insert(l.as_ref());
        }
        ner
    }

    pub fn insert(&mut self, label: &str) {
        let key: Vec<String> = split_tokens(label).iter().map(|t| t.to_lowercase()).collect();
        if key.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(key.len());
        self.labels.insert(key);
    }
}

impl EntityProvider for DictionaryNer {
    fn spans(&self, tokens: &[String]) -> Vec<Range<usize>> {
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < lower.len() {
            let longest = (1..=self.max_len.min(lower.len() - i))
                .rev()
                .find(|&n| self.labels.contains(&lower[i..i + n]));
            match longest {
                Some(n) => {
                    spans.push(i..i + n);
                    i += n;
                }
                None => i += 1,
            }
        }
        spans
    }
}

/// Full preprocessing of a raw question with the given entity provider.
pub fn preprocess(question: &str, ner: &dyn EntityProvider) -> Result<PreprocessedQuestion, PreprocessError> {
    let surface = split_tokens(question);
    if surface.is_empty() {
        return Err(PreprocessError::EmptyQuestion);
    }
    let spans = ner.spans(&surface);
    let mut pq = ner_substitute(&surface, &spans)?;
    pq.tokens = pq
        .surface_tokens
        .iter()
        .map(|t| if t == NER_TOKEN { t.clone() } else { t.to_lowercase() })
        .collect();
    pq.raw = question.to_string();
    Ok(pq)
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// English Snowball stem of a lowercased word.
pub fn stem(word: &str) -> String {
    stemmer().stem(&word.to_lowercase()).into_owned()
}

fn normalize_phrase(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn stem_key(phrase: &str) -> Vec<String> {
    phrase.split_whitespace().map(stem).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    /// Question word.
    V,
    /// Named entity.
    E,
    /// Property entity.
    R,
    /// Class (category) entity.
    C,
    /// Anything else.
    N,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

const DEFAULT_QUESTION_WORDS: &[&str] = &[
    "what", "which", "who", "whom", "whose", "where", "when", "why", "how", "how many", "how much",
    "is", "are", "was", "were", "did", "does", "do", "list", "name", "give", "count", "tell",
];

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "by", "for", "with", "to", "from", "and", "or", "as",
    "has", "have", "had", "be", "been", "that", "this", "there", "their", "its", "his", "her",
    "me", "all", "also", "?", ",", ".", "!",
];

/// Vocabulary behind the tagger. Phrases are stored normalized (lowercase,
/// single-spaced); properties and classes also match through their stems.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MettLexicon {
    question_words: BTreeSet<String>,
    properties: BTreeSet<String>,
    classes: BTreeSet<String>,
    stopwords: BTreeSet<String>,
}

impl MettLexicon {
    /// Default question words and stopwords with the given property and class
    /// phrases. Overlaps are resolved in favour of the higher-priority set
    /// (question word, then property, then class, then stopword).
    pub fn with_vocabulary<P, C>(properties: P, classes: C) -> Self
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        C: IntoIterator,
        C::Item: AsRef<str>,
    {
        let question_words: BTreeSet<String> =
            DEFAULT_QUESTION_WORDS.iter().map(|s| s.to_string()).collect();
        let properties: BTreeSet<String> = properties
            .into_iter()
            .map(|p| normalize_phrase(p.as_ref()))
            .filter(|p| !p.is_empty() && !question_words.contains(p))
            .collect();
        let classes: BTreeSet<String> = classes
            .into_iter()
            .map(|c| normalize_phrase(c.as_ref()))
            .filter(|c| !c.is_empty() && !question_words.contains(c) && !properties.contains(c))
            .collect();
        let stopwords = DEFAULT_STOPWORDS
            .iter()
            .map(|s| s.to_string())
            .filter(|s| !question_words.contains(s) && !properties.contains(s) && !classes.contains(s))
            .collect();
        MettLexicon {
            question_words,
            properties,
            classes,
            stopwords,
        }
    }

    /// Parses the sectioned lexicon file (`[question_words]`, `[properties]`,
    /// `[classes]`, `[stopwords]`, one phrase per line).
    pub fn parse(text: &str) -> Result<Self, PreprocessError> {
        let mut lex = MettLexicon::default();
        let mut section: Option<&mut BTreeSet<String>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(match name {
                    "question_words" => &mut lex.question_words,
                    "properties" => &mut lex.properties,
                    "classes" => &mut lex.classes,
                    "stopwords" => &mut lex.stopwords,
                    other => {
                        return Err(PreprocessError::Lexicon {
                            line: i + 1,
                            message: format!("unknown section `{other}`"),
                        })
                    }
                });
                continue;
            }
            let Some(set) = section.as_deref_mut() else {
                return Err(PreprocessError::Lexicon {
                    line: i + 1,
                    message: "term before any section header".into(),
                });
            };
            set.insert(normalize_phrase(line));
        }
        lex.check_disjoint()?;
        Ok(lex)
    }

    fn check_disjoint(&self) -> Result<(), PreprocessError> {
        let sets = [
            ("question_words", &self.question_words),
            ("properties", &self.properties),
            ("classes", &self.classes),
            ("stopwords", &self.stopwords),
        ];
        for (i, (a_name, a)) in sets.iter().enumerate() {
            for (b_name, b) in &sets[i + 1..] {
                if let Some(dup) = a.intersection(b).next() {
                    return Err(PreprocessError::Lexicon {
                        line: 0,
                        message: format!("`{dup}` appears in both {a_name} and {b_name}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Sectioned text form accepted by [`MettLexicon::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, set) in [
            ("question_words", &self.question_words),
            ("properties", &self.properties),
            ("classes", &self.classes),
            ("stopwords", &self.stopwords),
        ] {
            out.push_str(&format!("[{name}]\n"));
            for term in set {
                out.push_str(term);
                out.push('\n');
            }
        }
        out
    }

    pub fn properties(&self) -> &BTreeSet<String> {
        &self.properties
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub start: usize,
    pub end: usize,
    pub tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaggedQuestion {
    pub tags: Vec<TaggedSpan>,
    pub e_x: Vec<String>,
    pub r_x: Vec<String>,
    pub c_x: Vec<String>,
}

/// Pluggable tagger producing V/E/R/C/N spans and the E_x/R_x/C_x arrays.
pub trait EntityTypeTagger {
    fn tag(&self, question: &PreprocessedQuestion) -> TaggedQuestion;
}

impl EntityTypeTagger for MettLexicon {
    fn tag(&self, question: &PreprocessedQuestion) -> TaggedQuestion {
        mett_tag(question, self)
    }
}

/// Stemmed token sequences of multiword phrases.
type PhraseKeys = HashSet<Vec<String>>;

/// Lexicon-driven tagging. Categories are assigned in priority order
/// E > V > R > C; a span is only taken if none of its tokens is already tagged.
pub fn mett_tag(question: &PreprocessedQuestion, lexicon: &MettLexicon) -> TaggedQuestion {
    let n = question.tokens.len();
    let lower: Vec<String> = question.tokens.iter().map(|t| t.to_lowercase()).collect();
    let stems: Vec<String> = question.tokens.iter().map(|t| stem(t)).collect();
    let mut assigned: Vec<Option<Tag>> = vec![None; n];
    let mut spans: Vec<TaggedSpan> = Vec::new();

    for (i, tok) in question.tokens.iter().enumerate() {
        if tok == NER_TOKEN {
            assigned[i] = Some(Tag::E);
            spans.push(TaggedSpan { start: i, end: i + 1, tag: Tag::E });
        }
    }

    let question_keys: HashSet<Vec<String>> = lexicon
        .question_words
        .iter()
        .map(|p| p.split(' ').map(str::to_string).collect())
        .collect();
    let property_keys: HashSet<Vec<String>> = lexicon.properties.iter().map(|p| stem_key(p)).collect();
    let class_keys: HashSet<Vec<String>> = lexicon.classes.iter().map(|c| stem_key(c)).collect();
    let stop: HashSet<&str> = lexicon.stopwords.iter().map(String::as_str).collect();

    let passes: [(Tag, &PhraseKeys, &[String]); 3] = [
        (Tag::V, &question_keys, &lower),
        (Tag::R, &property_keys, &stems),
        (Tag::C, &class_keys, &stems),
    ];
    for (tag, keys, seq) in passes {
        let max_len = keys.iter().map(Vec::len).max().unwrap_or(0);
        let mut i = 0;
        while i < n {
            let found = (1..=max_len.min(n - i)).rev().find(|&len| {
                assigned[i..i + len].iter().all(Option::is_none)
                    && keys.contains(&seq[i..i + len])
                    && !(len == 1 && tag != Tag::V && stop.contains(lower[i].as_str()))
            });
            match found {
                Some(len) => {
                    assigned[i..i + len].iter_mut().for_each(|a| *a = Some(tag));
                    spans.push(TaggedSpan { start: i, end: i + len, tag });
                    i += len;
                }
                None => i += 1,
            }
        }
    }
    for (i, a) in assigned.iter().enumerate() {
        if a.is_none() {
            spans.push(TaggedSpan { start: i, end: i + 1, tag: Tag::N });
        }
    }
    spans.sort_by_key(|s| s.start);

    let mut tagged = TaggedQuestion::default();
    let mut ner_index = 0;
    for span in &spans {
        let surface = question.surface_tokens[span.start..span.end].join(" ");
        match span.tag {
            Tag::E => {
                let s = question.ner_surface.get(ner_index).cloned().unwrap_or(surface);
                ner_index += 1;
                tagged.e_x.push(s);
            }
            Tag::R if !tagged.r_x.contains(&surface) => tagged.r_x.push(surface),
            Tag::C if !tagged.c_x.contains(&surface) => tagged.c_x.push(surface),
            _ => {}
        }
    }
    tagged.tags = spans;
    tagged
}
