//! Flat `key = value` pipeline configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nqtforge_core::nqt::SeparatorStyle;
use nqtforge_nn::{ModelConfig, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: invalid value `{value}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("`{0}` is required for this dataset format")]
    Missing(&'static str),
    #[error(transparent)]
    Model(#[from] nqtforge_nn::ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    LcQuad,
    Qald,
    Synthetic,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lcquad" => Ok(DatasetFormat::LcQuad),
            "qald" => Ok(DatasetFormat::Qald),
            "synthetic" => Ok(DatasetFormat::Synthetic),
            _ => Err("expected lcquad|qald|synthetic".into()),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::LcQuad => "lcquad",
            DatasetFormat::Qald => "qald",
            DatasetFormat::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetFormat,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    /// Pretrained word vectors in text format.
    pub embeddings: Option<PathBuf>,
    /// Tagger lexicon; derived from the gold queries when absent.
    pub lexicon: Option<PathBuf>,
    /// Subgraph catalog; the builtin A–G catalog when absent.
    pub catalog: Option<PathBuf>,
    /// SPARQL endpoint URL; synthetic runs use their generated store when absent.
    pub endpoint: Option<String>,
    pub endpoint_timeout_secs: u64,
    pub run_dir: PathBuf,
    pub correction: bool,
    pub separator: SeparatorStyle,
    pub audit: bool,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetFormat::Synthetic,
            train_path: None,
            test_path: None,
            synthetic_train: 500,
            synthetic_test: 100,
            embeddings: None,
            lexicon: None,
            catalog: None,
            endpoint: None,
            endpoint_timeout_secs: 30,
            run_dir: PathBuf::from("run"),
            correction: true,
            separator: SeparatorStyle::Sep,
            audit: false,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: raw.to_string(),
        reason: e.to_string(),
    })
}

fn flag(key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.to_string(),
            value: raw.to_string(),
            reason: "expected a boolean".into(),
        }),
    }
}

impl PipelineConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        let mut seen = std::collections::HashSet::new();
        let path = |raw: &str| base.join(raw);
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            match key {
                "encoder" => cfg.model.encoder = value(key, raw)?,
                "attention" => cfg.model.attention = value(key, raw)?,
                "n_layers" => cfg.model.n_layers = value(key, raw)?,
                "d_model" => cfg.model.d_model = value(key, raw)?,
                "heads" => cfg.model.heads = value(key, raw)?,
                "kernel" => cfg.model.kernel = value(key, raw)?,
                "max_target_len" => cfg.model.max_target_len = value(key, raw)?,
                "max_source_len" => cfg.model.max_source_len = value(key, raw)?,
                "max_segments" => cfg.model.max_segments = value(key, raw)?,
                "scale_attention" => cfg.model.scale_attention = flag(key, raw)?,
                "d_ff" => cfg.model.d_ff = value(key, raw)?,
                "dropout" => cfg.model.dropout = value(key, raw)?,
                "seed" => cfg.set_seed(value(key, raw)?),
                "learning_rate" => cfg.train.learning_rate = value(key, raw)?,
                "batch_size" => cfg.train.batch_size = value(key, raw)?,
                "epochs" => cfg.train.epochs = value(key, raw)?,
                "clip_norm" => cfg.train.clip_norm = value(key, raw)?,
                "dataset" => cfg.dataset = value(key, raw)?,
                "train" => cfg.train_path = Some(path(raw)),
                "test" => cfg.test_path = Some(path(raw)),
                "synthetic_train" => cfg.synthetic_train = value(key, raw)?,
                "synthetic_test" => cfg.synthetic_test = value(key, raw)?,
                "embeddings" => cfg.embeddings = Some(path(raw)),
                "lexicon" => cfg.lexicon = Some(path(raw)),
                "catalog" => cfg.catalog = Some(path(raw)),
                "endpoint" => cfg.endpoint = Some(raw.to_string()),
                "endpoint_timeout_secs" => cfg.endpoint_timeout_secs = value(key, raw)?,
                "run_dir" => cfg.run_dir = path(raw),
                "correction" => cfg.correction = flag(key, raw)?,
                "separator" => cfg.separator = value(key, raw)?,
                "audit" => cfg.audit = flag(key, raw)?,
                "threads" => cfg.threads = value::<usize>(key, raw)?.max(1),
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::parse(&text, base)
    }

    /// One seed drives initialization, batch order, the synthetic grammar and correction.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        match self.dataset {
            DatasetFormat::Synthetic if self.synthetic_train == 0 => Err(ConfigError::Value {
                key: "synthetic_train".into(),
                value: "0".into(),
                reason: "must be at least 1".into(),
            }),
            DatasetFormat::LcQuad | DatasetFormat::Qald if self.train_path.is_none() => Err(ConfigError::Missing("train")),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nqtforge_nn::{AttentionKind, EncoderKind};

    #[test]
    fn parses_keys_and_resolves_paths() {
        let text = "\
# desk run
encoder = transformer
attention = msa
d_model = 32
heads = 2
epochs = 3
seed = 11
dataset = lcquad
train = data/train.json
separator = comma
correction = off
run_dir = out
";
        let cfg = PipelineConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.model.encoder, EncoderKind::Transformer);
        assert_eq!(cfg.model.attention, AttentionKind::Msa);
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!((cfg.model.seed, cfg.train.seed), (11, 11));
        assert_eq!(cfg.dataset, DatasetFormat::LcQuad);
        assert_eq!(cfg.train_path.as_deref(), Some(Path::new("/cfg/data/train.json")));
        assert_eq!(cfg.separator, SeparatorStyle::Comma);
        assert!(!cfg.correction);
        assert_eq!(cfg.run_dir, Path::new("/cfg/out"));
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(matches!(
            PipelineConfig::parse("colour = red", base),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(PipelineConfig::parse("epochs", base), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(
            PipelineConfig::parse("epochs = many", base),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("epochs = 1\nepochs = 2", base),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("dataset = qald", base),
            Err(ConfigError::Missing("train"))
        ));
        assert!(matches!(
            PipelineConfig::parse("d_model = 30\nheads = 4", base),
            Err(ConfigError::Model(_))
        ));
    }
}
