use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use nqtforge::commands::{EvalSummary, AUDIT_FILE, CORRECTED_FILE, DATASET_FILE, EVAL_FILE, LOSS_FILE, MODEL_FILE, RAW_FILE};
use nqtforge::config::PipelineConfig;
use nqtforge::pipeline::{gold_e2e, ingest, Backend, Resources};
use nqtforge_core::dataset::DatasetRecord;
use nqtforge_core::sparql::mock::MockServer;
use nqtforge_core::sparql::HttpEndpoint;

const CONFIG: &str = "\
synthetic_train = 40
synthetic_test = 12
epochs = 2
d_model = 16
heads = 2
d_ff = 32
run_dir = out
";

fn nqtforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nqtforge"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = nqtforge(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn summary(dir: &Path) -> EvalSummary {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out").join(EVAL_FILE)).unwrap()).unwrap()
}

#[test]
fn unknown_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nqtforge(dir.path(), &["launch"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid value 'launch'"));
}

#[test]
fn stage_failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), CONFIG).unwrap();
    let out = nqtforge(dir.path(), &["translate", "--config", "run.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("translate stage failed"));

    std::fs::write(dir.path().join("bad.conf"), "heads = 3\n").unwrap();
    let out = nqtforge(dir.path(), &["ingest", "--config", "bad.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config stage failed"));
}

#[test]
fn ingestion_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), CONFIG).unwrap();
    ok(dir.path(), &["ingest", "--config", "run.conf"]);
    let first = std::fs::read(dir.path().join("out").join(DATASET_FILE)).unwrap();
    ok(dir.path(), &["ingest", "--config", "run.conf"]);
    let second = std::fs::read(dir.path().join("out").join(DATASET_FILE)).unwrap();
    assert_eq!(first, second);
}

#[test]
fn full_chain_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.conf"), CONFIG).unwrap();
    for cmd in ["ingest", "train", "translate"] {
        ok(d, &[cmd, "--config", "run.conf"]);
    }
    ok(d, &["correct", "--config", "run.conf", "--audit"]);
    ok(d, &["evaluate", "--config", "run.conf"]);
    for f in [DATASET_FILE, MODEL_FILE, LOSS_FILE, RAW_FILE, CORRECTED_FILE, AUDIT_FILE, EVAL_FILE] {
        assert!(d.join("out").join(f).is_file(), "{f} missing");
    }
    let loss = std::fs::read_to_string(d.join("out").join(LOSS_FILE)).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(d.join("out").join(RAW_FILE)).unwrap().lines().count(), 12);

    let both = summary(d);
    assert_eq!(both.raw.records.len(), 12);
    assert!(both.corrected.is_some());
    ok(d, &["evaluate", "--config", "run.conf", "--no-correction"]);
    assert!(summary(d).corrected.is_none());

    ok(d, &["e2e", "--config", "run.conf"]);
    let e2e = summary(d);
    let corrected = e2e.corrected.as_ref().unwrap();
    assert!(corrected.macro_f1.is_some());
    assert!(e2e.parseable_corrected.unwrap() >= e2e.parseable_raw);
    assert_eq!(e2e.answers.as_ref().unwrap().len(), 12);

    ok(d, &["e2e", "--config", "run.conf", "--gold"]);
    let gold = summary(d);
    assert_eq!((gold.raw.macro_p, gold.raw.macro_r, gold.raw.macro_f1), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(gold.raw.exact_match, 1.0);
}

#[test]
fn gold_round_trip_over_http() {
    let cfg = PipelineConfig {
        synthetic_train: 30,
        synthetic_test: 5,
        ..Default::default()
    };
    let corpus = ingest(&cfg).unwrap();
    let resources = Resources::load(&cfg, &corpus.dataset).unwrap();
    let server = MockServer::serving(Arc::new(corpus.store.unwrap()));
    let backend = Backend::Http(HttpEndpoint::new(server.url(), std::time::Duration::from_secs(10)));
    let records: Vec<&DatasetRecord> = corpus.dataset.records.iter().collect();
    let report = gold_e2e(&backend, &records, &resources.linker, 2).unwrap();
    assert_eq!(report.macro_f1, Some(1.0));
}
