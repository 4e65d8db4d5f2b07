//! Pipeline stages: ingestion, training, translation, correction, scoring
//! and question answering.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use log::{info, warn};
use nqtforge_core::corrector::{CorrectionReport, Corrector};
use nqtforge_core::dataset::{
    assign_test_tail, gen_synthetic, load_lcquad, load_qald, Dataset, DatasetRecord, Exclusion, Split,
};
use nqtforge_core::eval::{question_pr, EvalReport, QuestionRecord};
use nqtforge_core::nqt::{parse_nqt, serialize_nqt, Nqt, ParseMode, SeparatorStyle};
use nqtforge_core::preprocess::{mett_tag, MettLexicon};
use nqtforge_core::sparql::{
    execute_all, filter_answers, nqt_to_sparql, parse_sparql, Answers, HttpEndpoint, LinkerIndex, QueryBackend,
    SparqlQuery, TripleStore, DEFAULT_MAX_IN_FLIGHT,
};
use nqtforge_core::subgraph::Catalog;
use nqtforge_nn::embeddings::load_pretrained;
use nqtforge_nn::{Model, TrainReport, Vocab};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DatasetFormat, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Train,
    Translate,
    Correct,
    Evaluate,
    Execute,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Translate => "translate",
            Stage::Correct => "correct",
            Stage::Evaluate => "evaluate",
            Stage::Execute => "execute",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl StageError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        StageError {
            stage,
            source: source.into(),
        }
    }
}

/// Attaches a stage to any error.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<Box<dyn std::error::Error + Send + Sync>>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, e))
    }
}

/// Normalized corpus plus the store answering it, when one was generated.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dataset: Dataset,
    pub store: Option<TripleStore>,
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Corpus, StageError> {
    match cfg.dataset {
        DatasetFormat::Synthetic => {
            let n = cfg.synthetic_train + cfg.synthetic_test;
            let synthetic = gen_synthetic(cfg.seed(), n);
            let mut dataset = synthetic.dataset;
            assign_test_tail(&mut dataset, cfg.synthetic_test);
            Ok(Corpus {
                dataset,
                store: Some(synthetic.store),
            })
        }
        format => {
            let load = |path: &Path, split| match format {
                DatasetFormat::LcQuad => load_lcquad(path, split),
                _ => load_qald(path, split),
            };
            let train = cfg.train_path.as_deref().ok_or("no train path configured").at(Stage::Ingest)?;
            let mut dataset = load(train, Split::Train).at(Stage::Ingest)?;
            if let Some(test) = &cfg.test_path {
                dataset.extend(load(test, Split::Test).at(Stage::Ingest)?);
            }
            if let Some(url) = &cfg.endpoint {
                let endpoint = HttpEndpoint::new(url.clone(), Duration::from_secs(cfg.endpoint_timeout_secs));
                exclude_unanswerable(&mut dataset, &endpoint, cfg.threads.max(1));
            }
            info!(
                "ingested {} records, excluded {}",
                dataset.records.len(),
                dataset.exclusions.len()
            );
            Ok(Corpus { dataset, store: None })
        }
    }
}

/// Drops records whose gold query returns no answers. Records whose query
/// fails to run are kept.
pub fn exclude_unanswerable<B: QueryBackend + Sync + ?Sized>(dataset: &mut Dataset, backend: &B, threads: usize) {
    let queries: Vec<Option<SparqlQuery>> = dataset.records.iter().map(|r| parse_sparql(&r.gold_sparql).ok()).collect();
    let runnable: Vec<SparqlQuery> = queries.iter().flatten().cloned().collect();
    let mut results = execute_all(backend, &runnable, threads).into_iter();
    let mut keep = Vec::with_capacity(dataset.records.len());
    for (record, query) in std::mem::take(&mut dataset.records).into_iter().zip(&queries) {
        let empty = match query.as_ref().map(|_| results.next().expect("one result per query")) {
            Some(Ok(answers)) => answers.is_empty(),
            Some(Err(e)) => {
                warn!("gold query of {} failed: {e}", record.id);
                false
            }
            None => false,
        };
        if empty {
            dataset.exclusions.push(Exclusion {
                id: record.id.clone(),
                reason: "gold query has no answers".into(),
            });
        } else {
            keep.push(record);
        }
    }
    dataset.records = keep;
}

/// Lexicon, catalog and linker shared by correction and execution.
#[derive(Debug, Clone)]
pub struct Resources {
    pub lexicon: MettLexicon,
    pub catalog: Catalog,
    pub linker: LinkerIndex,
}

impl Resources {
    pub fn load(cfg: &PipelineConfig, dataset: &Dataset) -> Result<Resources, StageError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| StageError::new(Stage::Config, format!("{}: {e}", p.display())))
        };
        let lexicon = match &cfg.lexicon {
            Some(p) => MettLexicon::parse(&read(p)?).at(Stage::Config)?,
            None => dataset.lexicon(),
        };
        let catalog = match &cfg.catalog {
            Some(p) => Catalog::parse(&read(p)?).at(Stage::Config)?,
            None => Catalog::builtin(),
        };
        Ok(Resources {
            lexicon,
            catalog,
            linker: dataset.linker(),
        })
    }
}

pub fn source_tokens(record: &DatasetRecord) -> Vec<String> {
    record.preprocessed.tokens.clone()
}

pub fn target_tokens(record: &DatasetRecord, style: SeparatorStyle) -> Vec<String> {
    record.gold_nqt.tokens(style)
}

pub fn training_pairs<'a>(
    records: impl IntoIterator<Item = &'a DatasetRecord>,
    style: SeparatorStyle,
) -> Vec<(Vec<String>, Vec<String>)> {
    records
        .into_iter()
        .map(|r| (source_tokens(r), target_tokens(r, style)))
        .collect()
}

/// Builds a vocabulary from the training pairs and trains a fresh model.
pub fn train_model(cfg: &PipelineConfig, dataset: &Dataset) -> Result<(Model, TrainReport), StageError> {
    let pairs = training_pairs(dataset.split(Split::Train), cfg.separator);
    let vocab = Vocab::from_corpus(pairs.iter().flat_map(|(s, t)| [s.as_slice(), t.as_slice()]));
    let mut model_cfg = cfg.model.clone();
    let longest = pairs.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
    model_cfg.max_source_len = model_cfg.max_source_len.max(longest);
    let mut model = match &cfg.embeddings {
        Some(path) => {
            let pretrained = load_pretrained(path, cfg.seed()).at(Stage::Train)?;
            Model::with_pretrained(model_cfg, vocab, &pretrained).at(Stage::Train)?
        }
        None => Model::new(model_cfg, vocab).at(Stage::Train)?,
    };
    info!(
        "training {}+{} ({} parameters) on {} pairs",
        cfg.model.encoder,
        cfg.model.attention,
        model.store.parameter_count(),
        pairs.len()
    );
    let report = model
        .train(&pairs, &cfg.train, |_, stats| {
            info!("epoch {} loss {:.5}", stats.epoch, stats.loss);
            None
        })
        .at(Stage::Train)?;
    Ok((model, report))
}

/// Greedy translations joined with spaces, in record order. A source the
/// model cannot encode yields an empty line.
pub fn translate(model: &Model, records: &[&DatasetRecord], threads: usize) -> Vec<String> {
    let sources: Vec<Vec<String>> = records.iter().map(|r| source_tokens(r)).collect();
    model
        .decode_all(&sources, threads)
        .into_iter()
        .zip(records)
        .map(|(d, r)| match d {
            Ok(d) => d.tokens.join(" "),
            Err(e) => {
                warn!("{}: {e}", r.id);
                String::new()
            }
        })
        .collect()
}

/// Parses model output leniently; `None` when no triple survives.
pub fn parse_prediction(text: &str, style: SeparatorStyle) -> Option<Nqt> {
    parse_nqt(text, style, ParseMode::Lenient)
        .ok()
        .map(|p| p.nqt)
        .filter(|n| !n.is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrected {
    /// Serialized corrected NQT, or the raw text when it did not parse.
    pub text: String,
    pub report: Option<CorrectionReport>,
}

pub fn correct_all(
    raw: &[String],
    records: &[&DatasetRecord],
    resources: &Resources,
    style: SeparatorStyle,
    seed: u64,
) -> Vec<Corrected> {
    let corrector = Corrector::new(resources.catalog.clone(), seed);
    raw.iter()
        .zip(records)
        .map(|(text, r)| match parse_prediction(text, style) {
            Some(nqt) => {
                let tagged = mett_tag(&r.preprocessed, &resources.lexicon);
                let (fixed, report) = corrector.correct(&nqt, &tagged, &r.preprocessed);
                Corrected {
                    text: serialize_nqt(&fixed, style),
                    report: Some(report),
                }
            }
            None => Corrected {
                text: text.clone(),
                report: None,
            },
        })
        .collect()
}

/// Scores predictions against gold in grounded form (entity slots replaced
/// by the question's entity surfaces). BLEU-1 always uses `[sep]` tokens so
/// that separator styles stay comparable.
pub fn score(label: &str, records: &[&DatasetRecord], preds: &[String], style: SeparatorStyle) -> EvalReport {
    let rows = records
        .iter()
        .zip(preds)
        .map(|(r, text)| {
            let surfaces = &r.preprocessed.ner_surface;
            let gold = r.gold_nqt.grounded(surfaces);
            let gold_tokens = gold.tokens(SeparatorStyle::Sep);
            let pred = parse_prediction(text, style).map(|n| n.grounded(surfaces));
            let pred_tokens = match &pred {
                Some(n) => n.tokens(SeparatorStyle::Sep),
                None => text.split_whitespace().map(str::to_string).collect(),
            };
            QuestionRecord::score(&r.id, pred.as_ref(), &pred_tokens, &gold, &gold_tokens)
        })
        .collect();
    EvalReport::from_records(label, rows)
}

/// Query backend selected by the configuration.
pub enum Backend {
    Store(TripleStore),
    Http(HttpEndpoint),
}

impl Backend {
    pub fn from_config(cfg: &PipelineConfig, store: Option<TripleStore>) -> Result<Backend, StageError> {
        match (&cfg.endpoint, store) {
            (Some(url), _) => Ok(Backend::Http(HttpEndpoint::new(
                url.clone(),
                Duration::from_secs(cfg.endpoint_timeout_secs),
            ))),
            (None, Some(store)) => Ok(Backend::Store(store)),
            (None, None) => Err(StageError::new(
                Stage::Execute,
                "no endpoint configured and the dataset has no fixture store",
            )),
        }
    }

    fn as_dyn(&self) -> &(dyn QueryBackend + Sync) {
        match self {
            Backend::Store(s) => s,
            Backend::Http(h) => h,
        }
    }

    fn max_in_flight(&self, threads: usize) -> usize {
        match self {
            Backend::Store(_) => threads,
            Backend::Http(_) => DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// System and gold answer sets for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerPair {
    pub id: String,
    pub query: Option<String>,
    pub system: BTreeSet<String>,
    pub gold: BTreeSet<String>,
}

/// Converts each prediction to SPARQL, executes it, filters by answer
/// type and pairs the result with the gold query's answers. Predictions
/// that do not convert or fail to execute answer nothing.
pub fn answer_all(
    backend: &Backend,
    records: &[&DatasetRecord],
    preds: &[Option<Nqt>],
    linker: &LinkerIndex,
    threads: usize,
) -> Result<Vec<AnswerPair>, StageError> {
    let gold_queries: Vec<SparqlQuery> = records
        .iter()
        .map(|r| parse_sparql(&r.gold_sparql))
        .collect::<Result<_, _>>()
        .at(Stage::Execute)?;
    let mut system_queries = Vec::new();
    let mut system_index = Vec::with_capacity(records.len());
    for (r, pred) in records.iter().zip(preds) {
        let query = pred.as_ref().and_then(|n| {
            nqt_to_sparql(n, r.form, linker, &r.preprocessed.ner_surface)
                .map_err(|e| warn!("{}: {e}", r.id))
                .ok()
        });
        system_index.push(query.map(|q| {
            system_queries.push(q);
            system_queries.len() - 1
        }));
    }
    let in_flight = backend.max_in_flight(threads);
    let gold_answers = execute_all(backend.as_dyn(), &gold_queries, in_flight);
    let system_answers = execute_all(backend.as_dyn(), &system_queries, in_flight);
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let gold = match &gold_answers[i] {
            Ok(a) => a.to_set(),
            Err(e) => return Err(StageError::new(Stage::Execute, format!("gold query of {}: {e}", r.id))),
        };
        let (query, system) = match system_index[i] {
            Some(k) => {
                let answers = system_answers[k].clone().unwrap_or_else(|e| {
                    warn!("{}: {e}", r.id);
                    Answers::empty()
                });
                (
                    Some(system_queries[k].render()),
                    filter_answers(&answers, r.answer_type).to_set(),
                )
            }
            None => (None, BTreeSet::new()),
        };
        out.push(AnswerPair {
            id: r.id.clone(),
            query,
            system,
            gold,
        });
    }
    Ok(out)
}

/// Fills per-question precision and recall into a report and recomputes
/// the aggregates.
pub fn with_answers(report: EvalReport, answers: &[AnswerPair]) -> EvalReport {
    let mut records = report.records;
    for (rec, a) in records.iter_mut().zip(answers) {
        let (p, r) = question_pr(&a.system, &a.gold);
        rec.precision = Some(p);
        rec.recall = Some(r);
    }
    EvalReport::from_records(report.label, records)
}

/// Runs question answering with every gold NQT injected in place of a
/// model prediction.
pub fn gold_e2e(
    backend: &Backend,
    records: &[&DatasetRecord],
    linker: &LinkerIndex,
    threads: usize,
) -> Result<EvalReport, StageError> {
    let preds: Vec<String> = records.iter().map(|r| serialize_nqt(&r.gold_nqt, SeparatorStyle::Sep)).collect();
    let parsed: Vec<Option<Nqt>> = records.iter().map(|r| Some(r.gold_nqt.clone())).collect();
    let answers = answer_all(backend, records, &parsed, linker, threads)?;
    let report = score("gold-injected", records, &preds, SeparatorStyle::Sep);
    Ok(with_answers(report, &answers))
}

/// Raw and corrected scores of one separator style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub separator: SeparatorStyle,
    pub final_loss: Option<f64>,
    pub raw_bleu1: f64,
    pub raw_exact_match: f64,
    pub corrected_bleu1: f64,
    pub corrected_exact_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:>7.2}%", v * 100.0);
        let mut out = String::from("separator  raw BLEU-1  raw EM    corr BLEU-1  corr EM\n");
        for r in &self.rows {
            let name = match r.separator {
                SeparatorStyle::Sep => "[sep]",
                SeparatorStyle::Comma => "comma",
            };
            out.push_str(&format!(
                "{name:<10} {}   {}  {}     {}\n",
                pct(r.raw_bleu1),
                pct(r.raw_exact_match),
                pct(r.corrected_bleu1),
                pct(r.corrected_exact_match)
            ));
        }
        out
    }
}

/// Trains and evaluates one model per separator style on the same data.
pub fn separator_ablation(cfg: &PipelineConfig, dataset: &Dataset) -> Result<AblationReport, StageError> {
    let resources = Resources::load(cfg, dataset)?;
    let test: Vec<&DatasetRecord> = dataset.split(Split::Test).collect();
    let mut rows = Vec::new();
    for style in [SeparatorStyle::Sep, SeparatorStyle::Comma] {
        let run_cfg = PipelineConfig {
            separator: style,
            ..cfg.clone()
        };
        let (model, train) = train_model(&run_cfg, dataset)?;
        let raw = translate(&model, &test, cfg.threads);
        let fixed: Vec<String> = correct_all(&raw, &test, &resources, style, cfg.seed())
            .into_iter()
            .map(|c| c.text)
            .collect();
        let r = score("raw", &test, &raw, style);
        let c = score("corrected", &test, &fixed, style);
        rows.push(AblationRow {
            separator: style,
            final_loss: train.final_loss(),
            raw_bleu1: r.bleu1,
            raw_exact_match: r.exact_match,
            corrected_bleu1: c.bleu1,
            corrected_exact_match: c.exact_match,
        });
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nqtforge_core::dataset::make_record;
    use nqtforge_core::eval::ErrorTag;

    fn record() -> DatasetRecord {
        make_record(
            "q1",
            "Who is the spouse of Alice Smith?",
            "SELECT DISTINCT ?uri WHERE { dbr:Alice_Smith dbo:spouse ?uri }",
            Split::Test,
        )
        .unwrap()
    }

    #[test]
    fn unanswerable_gold_queries_are_excluded() {
        let store = TripleStore::parse("dbr:Alice_Smith dbo:spouse dbr:Bob .\n").unwrap();
        let other = make_record(
            "q2",
            "Who is the spouse of Bob?",
            "SELECT DISTINCT ?uri WHERE { dbr:Bob dbo:spouse ?uri }",
            Split::Test,
        )
        .unwrap();
        let ask = make_record(
            "q3",
            "Is Carol the spouse of Alice Smith?",
            "ASK WHERE { dbr:Alice_Smith dbo:spouse dbr:Carol }",
            Split::Test,
        )
        .unwrap();
        let mut dataset = Dataset {
            records: vec![record(), other, ask],
            exclusions: Vec::new(),
        };
        exclude_unanswerable(&mut dataset, &store, 2);
        let kept: Vec<&str> = dataset.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(kept, ["q1", "q3"]);
        assert_eq!(dataset.exclusions.len(), 1);
        assert_eq!(dataset.exclusions[0].id, "q2");
    }

    #[test]
    fn scores_in_grounded_space_for_either_style() {
        let r = record();
        let sep = serialize_nqt(&r.gold_nqt, SeparatorStyle::Sep);
        let comma = serialize_nqt(&r.gold_nqt, SeparatorStyle::Comma);
        let a = score("sep", &[&r], &[sep], SeparatorStyle::Sep);
        let b = score("comma", &[&r], &[comma], SeparatorStyle::Comma);
        assert_eq!((a.exact_match, a.bleu1), (1.0, 1.0));
        assert_eq!((b.exact_match, b.bleu1), (1.0, 1.0));
        assert_eq!(a.records[0].gold, "[(Alice Smith, spouse, ?ans)]");
    }

    #[test]
    fn unparseable_output_scores_raw_tokens() {
        let r = record();
        let report = score("raw", &[&r], &["NER1 [sep] spouse".to_string()], SeparatorStyle::Sep);
        let q = &report.records[0];
        assert!(!q.exact_match);
        assert_eq!(q.errors, vec![ErrorTag::Other]);
        assert_eq!(q.c, 3);
        assert!(q.bleu1 > 0.0 && q.bleu1 < 1.0);
    }

    #[test]
    fn correction_keeps_unparseable_text_and_aligns_shapes() {
        let r = record();
        let dataset = Dataset {
            records: vec![r.clone()],
            exclusions: vec![],
        };
        let resources = Resources::load(&PipelineConfig::default(), &dataset).unwrap();
        let raw = vec!["[sep_end]".to_string(), "NER1 [sep] spouse [sep] x [sep_end]".to_string()];
        let out = correct_all(&raw, &[&r, &r], &resources, SeparatorStyle::Sep, 1);
        assert_eq!(out[0].text, "[sep_end]");
        assert!(out[0].report.is_none());
        assert_eq!(out[1].text, "Alice Smith [sep] spouse [sep] ans [sep_end]");
        assert_eq!(out[1].report.as_ref().unwrap().expected.as_deref(), Some("A"));
    }
}
