//! Translation and answer metrics: BLEU-1, Exact Match, macro
//! precision/recall/F1, and the NQT error taxonomy.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nqt::{Nqt, NqtTriple};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("empty candidate sequence")]
    EmptyCandidate,
    #[error("empty reference sequence")]
    EmptyReference,
    #[error("csv: {0}")]
    Csv(String),
}

/// Clipped unigram precision times the brevity penalty
/// (1 when the candidate is at least as long as the reference, else e^(1 - r/c)).
pub fn bleu1<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64, EvalError> {
    if candidate.is_empty() {
        return Err(EvalError::EmptyCandidate);
    }
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *ref_counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for t in candidate {
        *cand_counts.entry(t.as_ref()).or_default() += 1;
    }
    let matches: usize = cand_counts
        .iter()
        .map(|(t, n)| (*n).min(ref_counts.get(t).copied().unwrap_or(0)))
        .sum();
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let p1 = matches as f64 / c;
    if p1 == 0.0 {
        return Ok(0.0);
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * p1.ln().exp())
}

/// Multiset equality of triples; order inside a triple matters, order of
/// triples does not.
pub fn exact_match(pred: &Nqt, gold: &Nqt) -> bool {
    let mut a: Vec<&NqtTriple> = pred.triples().iter().collect();
    let mut b: Vec<&NqtTriple> = gold.triples().iter().collect();
    a.sort();
    b.sort();
    a == b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-question precision and recall. An empty system answer scores P = 0
/// unless the gold answer is empty too (then P = R = 1); a non-empty system
/// answer to an empty gold set scores 0 for both.
pub fn question_pr(system: &BTreeSet<String>, gold: &BTreeSet<String>) -> (f64, f64) {
    match (system.is_empty(), gold.is_empty()) {
        (true, true) => (1.0, 1.0),
        (true, false) | (false, true) => (0.0, 0.0),
        (false, false) => {
            let correct = system.intersection(gold).count() as f64;
            (correct / system.len() as f64, correct / gold.len() as f64)
        }
    }
}

/// Averages per-question P and R, then F1 = 2PR/(P+R) on the averages.
pub fn macro_metrics(pairs: &[(BTreeSet<String>, BTreeSet<String>)]) -> MacroScores {
    if pairs.is_empty() {
        return MacroScores { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let (sp, sr) = pairs
        .iter()
        .map(|(s, g)| question_pr(s, g))
        .fold((0.0, 0.0), |(a, b), (p, r)| (a + p, b + r));
    let n = pairs.len() as f64;
    macro_from(sp / n, sr / n)
}

pub fn macro_from(precision: f64, recall: f64) -> MacroScores {
    let f1 = if precision + recall > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    };
    MacroScores { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorTag {
    TripleFlip,
    WrongVar,
    WrongQuantity,
    Other,
}

/// Multi-label error tags for a mismatched prediction. Only triples without
/// an exact counterpart on the other side are compared for flips and
/// variable mistakes.
pub fn classify_error(pred: &Nqt, gold: &Nqt) -> BTreeSet<ErrorTag> {
    let mut gold_left: Vec<&NqtTriple> = gold.triples().iter().collect();
    let mut pred_left: Vec<&NqtTriple> = Vec::new();
    for t in pred.triples() {
        match gold_left.iter().position(|g| *g == t) {
            Some(i) => {
                gold_left.remove(i);
            }
            None => pred_left.push(t),
        }
    }
    let mut tags = BTreeSet::new();
    if pred_left.iter().any(|p| gold_left.iter().any(|g| p.flipped() == **g)) {
        tags.insert(ErrorTag::TripleFlip);
    }
    let wrong_var = |p: &NqtTriple, g: &NqtTriple| {
        let pairs = [(&p.subject, &g.subject), (&p.predicate, &g.predicate), (&p.object, &g.object)];
        let diffs: Vec<_> = pairs.iter().filter(|(a, b)| a != b).collect();
        !diffs.is_empty() && diffs.iter().all(|(a, b)| a.is_variable() && b.is_variable())
    };
    if pred_left.iter().any(|p| gold_left.iter().any(|g| wrong_var(p, g))) {
        tags.insert(ErrorTag::WrongVar);
    }
    if pred.len() != gold.len() {
        tags.insert(ErrorTag::WrongQuantity);
    }
    if tags.is_empty() {
        tags.insert(ErrorTag::Other);
    }
    tags
}

/// Scores for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    /// Predicted NQT in triple-list notation, or the raw output when unparseable.
    pub pred: String,
    pub gold: String,
    pub bleu1: f64,
    pub exact_match: bool,
    /// Candidate and reference token counts.
    pub c: usize,
    pub r: usize,
    pub errors: Vec<ErrorTag>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl QuestionRecord {
    /// Scores a prediction given as a token sequence (and its parse, if any)
    /// against the gold NQT and its token sequence.
    pub fn score(
        id: impl Into<String>,
        pred: Option<&Nqt>,
        pred_tokens: &[String],
        gold: &Nqt,
        gold_tokens: &[String],
    ) -> QuestionRecord {
        let bleu = bleu1(pred_tokens, gold_tokens).unwrap_or(0.0);
        let em = pred.is_some_and(|p| exact_match(p, gold));
        let errors = match pred {
            Some(_) if em => Vec::new(),
            Some(p) => classify_error(p, gold).into_iter().collect(),
            None => vec![ErrorTag::Other],
        };
        QuestionRecord {
            id: id.into(),
            pred: pred.map_or_else(|| pred_tokens.join(" "), ToString::to_string),
            gold: gold.to_string(),
            bleu1: bleu,
            exact_match: em,
            c: pred_tokens.len(),
            r: gold_tokens.len(),
            errors,
            precision: None,
            recall: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub bleu1: f64,
    pub exact_match: f64,
    pub macro_p: Option<f64>,
    pub macro_r: Option<f64>,
    pub macro_f1: Option<f64>,
    pub error_counts: BTreeMap<ErrorTag, usize>,
    pub records: Vec<QuestionRecord>,
}

impl EvalReport {
    /// Aggregates records; macro scores are included when every record has
    /// precision and recall.
    pub fn from_records(label: impl Into<String>, records: Vec<QuestionRecord>) -> EvalReport {
        let n = records.len().max(1) as f64;
        let bleu1 = records.iter().map(|r| r.bleu1).sum::<f64>() / n;
        let exact_match = records.iter().filter(|r| r.exact_match).count() as f64 / n;
        let mut error_counts: BTreeMap<ErrorTag, usize> = [
            ErrorTag::TripleFlip,
            ErrorTag::WrongVar,
            ErrorTag::WrongQuantity,
            ErrorTag::Other,
        ]
        .into_iter()
        .map(|t| (t, 0))
        .collect();
        for r in &records {
            for e in &r.errors {
                *error_counts.entry(*e).or_default() += 1;
            }
        }
        let pr: Option<Vec<(f64, f64)>> = records.iter().map(|r| r.precision.zip(r.recall)).collect();
        let scores = pr.filter(|v| !v.is_empty()).map(|v| {
            let (sp, sr) = v.iter().fold((0.0, 0.0), |(a, b), (p, r)| (a + p, b + r));
            macro_from(sp / v.len() as f64, sr / v.len() as f64)
        });
        EvalReport {
            label: label.into(),
            bleu1,
            exact_match,
            macro_p: scores.map(|s| s.precision),
            macro_r: scores.map(|s| s.recall),
            macro_f1: scores.map(|s| s.f1),
            error_counts,
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Summary lines for terminals.
    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:.2}%", v * 100.0);
        let mut out = String::new();
        let _ = writeln!(out, "{} ({} questions)", self.label, self.records.len());
        let _ = writeln!(out, "  {:<14} {}", "BLEU-1", pct(self.bleu1));
        let _ = writeln!(out, "  {:<14} {}", "Exact Match", pct(self.exact_match));
        if let (Some(p), Some(r), Some(f)) = (self.macro_p, self.macro_r, self.macro_f1) {
            let _ = writeln!(out, "  {:<14} {}", "Macro P", pct(p));
            let _ = writeln!(out, "  {:<14} {}", "Macro R", pct(r));
            let _ = writeln!(out, "  {:<14} {}", "Macro F1", pct(f));
        }
        for (tag, n) in &self.error_counts {
            let _ = writeln!(out, "  {:<14} {n}", format!("{tag:?}"));
        }
        out
    }

    /// One row per question.
    pub fn records_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
        w.write_record(["id", "bleu1", "exact_match", "c", "r", "errors", "precision", "recall", "pred", "gold"])
            .map_err(csv_err)?;
        for r in &self.records {
            let errors = r.errors.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>().join("|");
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            w.write_record([
                r.id.clone(),
                format!("{:.6}", r.bleu1),
                u8::from(r.exact_match).to_string(),
                r.c.to_string(),
                r.r.to_string(),
                errors,
                opt(r.precision),
                opt(r.recall),
                r.pred.clone(),
                r.gold.clone(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
