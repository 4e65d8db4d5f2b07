//! Commands over a run directory. Each command reads the artifacts of the
//! stages before it and writes its own under fixed file names.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::ValueEnum;
use log::info;
use nqtforge_core::dataset::{Dataset, DatasetRecord, Split};
use nqtforge_core::eval::EvalReport;
use nqtforge_core::nqt::Nqt;
use nqtforge_core::sparql::TripleStore;
use nqtforge_nn::Model;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::pipeline::{
    answer_all, correct_all, gold_e2e, ingest, parse_prediction, score, separator_ablation, train_model, translate,
    with_answers, AnswerPair, AtStage, Backend, Resources, Stage, StageError,
};

pub const DATASET_FILE: &str = "dataset.norm.json";
pub const STORE_FILE: &str = "store.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RAW_FILE: &str = "nqt.raw.txt";
pub const CORRECTED_FILE: &str = "nqt.corrected.txt";
pub const AUDIT_FILE: &str = "audit.log";
pub const EVAL_FILE: &str = "eval.json";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const ABLATION_FILE: &str = "ablation.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Load or generate the dataset and write its normalized form.
    Ingest,
    /// Train a model on the train split.
    Train,
    /// Translate the test split into raw NQTs.
    Translate,
    /// Correct raw NQTs against the expected subgraph types.
    Correct,
    /// Score raw and corrected NQTs.
    Evaluate,
    /// Translate, correct, execute and score answers.
    E2e,
    /// Train and score one model per separator style.
    Ablate,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

/// Per-invocation switches that are not part of the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// `e2e` answers with the gold NQTs instead of model output.
    pub gold: bool,
}

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub raw: EvalReport,
    pub corrected: Option<EvalReport>,
    /// Predictions that parse into at least one triple, before and after correction.
    pub parseable_raw: usize,
    pub parseable_corrected: Option<usize>,
    pub answers: Option<Vec<AnswerPair>>,
}

impl EvalSummary {
    pub fn to_table(&self) -> String {
        let mut out = self.raw.to_table();
        if let Some(c) = &self.corrected {
            out.push_str(&c.to_table());
        }
        out
    }
}

/// Output directory with atomic writes.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes to a temporary file in the run directory, then renames it into place.
    pub fn write(&self, name: &str, contents: &[u8], stage: Stage) -> Result<(), StageError> {
        std::fs::create_dir_all(&self.root).at(stage)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).at(stage)?;
        tmp.write_all(contents).at(stage)?;
        tmp.as_file().sync_all().at(stage)?;
        tmp.persist(self.path(name)).map_err(|e| StageError::new(stage, e.error))?;
        Ok(())
    }

    pub fn read(&self, name: &str, stage: Stage) -> Result<String, StageError> {
        let path = self.path(name);
        std::fs::read_to_string(&path).map_err(|e| {
            StageError::new(stage, format!("{}: {e}", path.display()))
        })
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }
}

fn load_dataset(dir: &RunDir, stage: Stage) -> Result<Dataset, StageError> {
    Dataset::from_json(&dir.read(DATASET_FILE, stage)?).at(stage)
}

fn load_store(dir: &RunDir, stage: Stage) -> Result<Option<TripleStore>, StageError> {
    if !dir.exists(STORE_FILE) {
        return Ok(None);
    }
    Ok(Some(TripleStore::parse(&dir.read(STORE_FILE, stage)?).at(stage)?))
}

fn load_model(dir: &RunDir, stage: Stage) -> Result<Model, StageError> {
    let path = dir.path(MODEL_FILE);
    let file = std::fs::File::open(&path).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))?;
    Model::load(&mut std::io::BufReader::new(file)).at(stage)
}

/// `id<TAB>text` lines.
fn format_lines(records: &[&DatasetRecord], texts: &[String]) -> String {
    records
        .iter()
        .zip(texts)
        .map(|(r, t)| format!("{}\t{t}\n", r.id))
        .collect()
}

/// Reads `id<TAB>text` lines and orders them like `records`.
fn parse_lines(text: &str, records: &[&DatasetRecord], stage: Stage) -> Result<Vec<String>, StageError> {
    let mut by_id = std::collections::HashMap::new();
    for line in text.lines() {
        let (id, body) = line.split_once('\t').unwrap_or((line, ""));
        by_id.insert(id.to_string(), body.to_string());
    }
    records
        .iter()
        .map(|r| {
            by_id
                .remove(&r.id)
                .ok_or_else(|| StageError::new(stage, format!("no prediction for {}", r.id)))
        })
        .collect()
}

fn test_records(dataset: &Dataset) -> Vec<&DatasetRecord> {
    dataset.split(Split::Test).collect()
}

fn parseable(texts: &[String], cfg: &PipelineConfig) -> usize {
    texts.iter().filter(|t| parse_prediction(t, cfg.separator).is_some()).count()
}

pub fn run_ingest(cfg: &PipelineConfig, dir: &RunDir) -> Result<Dataset, StageError> {
    let corpus = ingest(cfg)?;
    dir.write(DATASET_FILE, corpus.dataset.to_json().as_bytes(), Stage::Ingest)?;
    if let Some(store) = &corpus.store {
        dir.write(STORE_FILE, store.to_text().as_bytes(), Stage::Ingest)?;
    }
    info!(
        "{} records ({} train, {} test), {} excluded",
        corpus.dataset.records.len(),
        corpus.dataset.split(Split::Train).count(),
        corpus.dataset.split(Split::Test).count(),
        corpus.dataset.exclusions.len()
    );
    Ok(corpus.dataset)
}

pub fn run_train(cfg: &PipelineConfig, dir: &RunDir) -> Result<Model, StageError> {
    let dataset = load_dataset(dir, Stage::Train)?;
    let (model, report) = train_model(cfg, &dataset)?;
    let mut bytes = Vec::new();
    model.save(&mut bytes).at(Stage::Train)?;
    dir.write(MODEL_FILE, &bytes, Stage::Train)?;
    dir.write(LOSS_FILE, report.to_csv().as_bytes(), Stage::Train)?;
    Ok(model)
}

pub fn run_translate(cfg: &PipelineConfig, dir: &RunDir) -> Result<Vec<String>, StageError> {
    let dataset = load_dataset(dir, Stage::Translate)?;
    let model = load_model(dir, Stage::Translate)?;
    let test = test_records(&dataset);
    let raw = translate(&model, &test, cfg.threads);
    dir.write(RAW_FILE, format_lines(&test, &raw).as_bytes(), Stage::Translate)?;
    Ok(raw)
}

pub fn run_correct(cfg: &PipelineConfig, dir: &RunDir) -> Result<Vec<String>, StageError> {
    let dataset = load_dataset(dir, Stage::Correct)?;
    let test = test_records(&dataset);
    let raw = parse_lines(&dir.read(RAW_FILE, Stage::Correct)?, &test, Stage::Correct)?;
    if !cfg.correction {
        info!("correction disabled; copying raw NQTs");
        dir.write(CORRECTED_FILE, format_lines(&test, &raw).as_bytes(), Stage::Correct)?;
        return Ok(raw);
    }
    let resources = Resources::load(cfg, &dataset)?;
    let corrected = correct_all(&raw, &test, &resources, cfg.separator, cfg.seed());
    let texts: Vec<String> = corrected.iter().map(|c| c.text.clone()).collect();
    dir.write(CORRECTED_FILE, format_lines(&test, &texts).as_bytes(), Stage::Correct)?;
    if cfg.audit {
        let mut log = String::new();
        for (c, r) in corrected.iter().zip(&test) {
            match &c.report {
                Some(report) => {
                    for line in report.audit_lines(&r.id) {
                        log.push_str(&line);
                        log.push('\n');
                    }
                }
                None => log.push_str(&format!("{}\tunparseable\n", r.id)),
            }
        }
        dir.write(AUDIT_FILE, log.as_bytes(), Stage::Correct)?;
    }
    Ok(texts)
}

fn write_summary(dir: &RunDir, summary: &EvalSummary, stage: Stage) -> Result<(), StageError> {
    let json = serde_json::to_string_pretty(summary).at(stage)?;
    dir.write(EVAL_FILE, json.as_bytes(), stage)?;
    let last = summary.corrected.as_ref().unwrap_or(&summary.raw);
    dir.write(EVAL_CSV_FILE, last.records_csv().at(stage)?.as_bytes(), stage)?;
    Ok(())
}

pub fn run_evaluate(cfg: &PipelineConfig, dir: &RunDir) -> Result<EvalSummary, StageError> {
    let dataset = load_dataset(dir, Stage::Evaluate)?;
    let test = test_records(&dataset);
    let raw = parse_lines(&dir.read(RAW_FILE, Stage::Evaluate)?, &test, Stage::Evaluate)?;
    let corrected = if cfg.correction {
        Some(parse_lines(&dir.read(CORRECTED_FILE, Stage::Evaluate)?, &test, Stage::Evaluate)?)
    } else {
        None
    };
    let summary = EvalSummary {
        raw: score("raw", &test, &raw, cfg.separator),
        corrected: corrected.as_ref().map(|c| score("corrected", &test, c, cfg.separator)),
        parseable_raw: parseable(&raw, cfg),
        parseable_corrected: corrected.as_ref().map(|c| parseable(c, cfg)),
        answers: None,
    };
    write_summary(dir, &summary, Stage::Evaluate)?;
    Ok(summary)
}

pub fn run_e2e(cfg: &PipelineConfig, dir: &RunDir, opts: RunOptions) -> Result<EvalSummary, StageError> {
    let dataset = load_dataset(dir, Stage::Execute)?;
    let resources = Resources::load(cfg, &dataset)?;
    let backend = Backend::from_config(cfg, load_store(dir, Stage::Execute)?)?;
    if opts.gold {
        let records: Vec<&DatasetRecord> = dataset.records.iter().collect();
        let report = gold_e2e(&backend, &records, &resources.linker, cfg.threads)?;
        let summary = EvalSummary {
            parseable_raw: report.records.len(),
            raw: report,
            corrected: None,
            parseable_corrected: None,
            answers: None,
        };
        write_summary(dir, &summary, Stage::Execute)?;
        return Ok(summary);
    }
    let raw = run_translate(cfg, dir)?;
    let corrected = if cfg.correction {
        Some(run_correct(cfg, dir)?)
    } else {
        None
    };
    let test = test_records(&dataset);
    let answer = |texts: &[String]| {
        let preds: Vec<Option<Nqt>> = texts.iter().map(|t| parse_prediction(t, cfg.separator)).collect();
        answer_all(&backend, &test, &preds, &resources.linker, cfg.threads)
    };
    let raw_answers = answer(&raw)?;
    let raw_report = with_answers(score("raw", &test, &raw, cfg.separator), &raw_answers);
    let (corrected_report, final_answers) = match &corrected {
        Some(c) => {
            let a = answer(c)?;
            (Some(with_answers(score("corrected", &test, c, cfg.separator), &a)), a)
        }
        None => (None, raw_answers),
    };
    let summary = EvalSummary {
        raw: raw_report,
        corrected: corrected_report,
        parseable_raw: parseable(&raw, cfg),
        parseable_corrected: corrected.as_ref().map(|c| parseable(c, cfg)),
        answers: Some(final_answers),
    };
    write_summary(dir, &summary, Stage::Execute)?;
    Ok(summary)
}

pub fn run_ablate(cfg: &PipelineConfig, dir: &RunDir) -> Result<String, StageError> {
    let dataset = load_dataset(dir, Stage::Train)?;
    let report = separator_ablation(cfg, &dataset)?;
    dir.write(ABLATION_FILE, report.to_json().as_bytes(), Stage::Evaluate)?;
    Ok(report.to_table())
}

/// Runs one command and returns a human-readable summary.
pub fn run(command: Command, cfg: &PipelineConfig, opts: RunOptions) -> Result<String, StageError> {
    let dir = RunDir::new(&cfg.run_dir);
    let at = |name: &str| dir.path(name).display().to_string();
    match command {
        Command::Ingest => {
            let d = run_ingest(cfg, &dir)?;
            Ok(format!("{} records written to {}", d.records.len(), at(DATASET_FILE)))
        }
        Command::Train => {
            run_train(cfg, &dir)?;
            Ok(format!("model written to {}, losses to {}", at(MODEL_FILE), at(LOSS_FILE)))
        }
        Command::Translate => {
            let raw = run_translate(cfg, &dir)?;
            Ok(format!("{} translations written to {}", raw.len(), at(RAW_FILE)))
        }
        Command::Correct => {
            let c = run_correct(cfg, &dir)?;
            Ok(format!("{} corrected NQTs written to {}", c.len(), at(CORRECTED_FILE)))
        }
        Command::Evaluate => Ok(run_evaluate(cfg, &dir)?.to_table()),
        Command::E2e => Ok(run_e2e(cfg, &dir, opts)?.to_table()),
        Command::Ablate => run_ablate(cfg, &dir),
    }
}

