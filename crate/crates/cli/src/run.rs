//! Run configuration and the train pipeline shared by `train` and `ablate`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use semhash_core::config::{parse_key_values, parse_list, parse_override, parse_value};
use semhash_core::rng::rng_for;
use semhash_core::trainer::{self, negative_elbo, split_precision};
use semhash_core::{Checkpoint, Corpus, Error, Hyper, ModelConfig, PshModel, Split, TrainConfig, TrainMode, Vocabulary};

use crate::error::{CliError, CliResult};

const MODEL_INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub split: (f64, f64, f64),
    pub split_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            vocab: None,
            output_dir: PathBuf::from("run"),
            split: (0.8, 0.1, 0.1),
            split_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the file (paths relative to the file), then
    /// `key=value` overrides (paths relative to the working directory).
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            let pairs = parse_key_values(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
            for (k, v) in pairs {
                cfg.set(&k, &v, Some(base))?;
            }
        }
        for o in overrides {
            let (k, v) = parse_override(o).map_err(CliError::from)?;
            cfg.set(&k, &v, None)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> CliResult<()> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "corpus" => self.corpus = Some(path(value)),
            "vocab" => self.vocab = Some(path(value)),
            "output_dir" => self.output_dir = path(value),
            "split_train" => self.split.0 = parse_value(key, value)?,
            "split_validation" => self.split.1 = parse_value(key, value)?,
            "split_test" => self.split.2 = parse_value(key, value)?,
            "split_seed" => self.split_seed = parse_value(key, value)?,
            "code_bits" => self.model.code_bits = parse_value(key, value)?,
            "hidden" => self.model.hidden = parse_list(key, value)?,
            "dropout" => self.model.dropout = parse_value(key, value)?,
            "prior" => self.model.prior = parse_value(key, value)?,
            _ => {
                if !self.train.set(key, value)? {
                    return Err(CliError::config(key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let hidden: Vec<String> = self.model.hidden.iter().map(usize::to_string).collect();
        let mut out = vec![
            ("corpus".to_string(), opt(&self.corpus)),
            ("vocab".to_string(), opt(&self.vocab)),
            ("output_dir".to_string(), self.output_dir.display().to_string()),
            ("split_train".to_string(), self.split.0.to_string()),
            ("split_validation".to_string(), self.split.1.to_string()),
            ("split_test".to_string(), self.split.2.to_string()),
            ("split_seed".to_string(), self.split_seed.to_string()),
            ("code_bits".to_string(), self.model.code_bits.to_string()),
            ("hidden".to_string(), hidden.join(",")),
            ("dropout".to_string(), self.model.dropout.to_string()),
            ("prior".to_string(), self.model.prior.to_string()),
        ];
        out.extend(self.train.to_pairs());
        out
    }

    pub fn validate(&self) -> CliResult<(PathBuf, PathBuf)> {
        let corpus = self.corpus.clone().ok_or_else(|| CliError::config("corpus", "required key is missing"))?;
        let vocab = self.vocab.clone().ok_or_else(|| CliError::config("vocab", "required key is missing"))?;
        if !corpus.is_file() {
            return Err(CliError::config("corpus", format!("no such file {}", corpus.display())));
        }
        if !vocab.is_file() {
            return Err(CliError::config("vocab", format!("no such file {}", vocab.display())));
        }
        self.train.validate()?;
        if self.model.code_bits == 0 {
            return Err(CliError::config("code_bits", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(CliError::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.model.prior > 0.0 && self.model.prior < 1.0) {
            return Err(CliError::config("prior", "must lie in (0, 1)"));
        }
        Ok((corpus, vocab))
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    pub corpus_sha256: String,
    pub seed: u64,
    pub code_version: String,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_files(paths: &[&Path]) -> CliResult<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(fs::read(p)?);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Corpus with splits from its own tags, or from the configured fractions.
pub fn load_corpus(bow: &Path, vocab: &Path, split: (f64, f64, f64), seed: u64) -> CliResult<Corpus> {
    let corpus = Corpus::load(bow, vocab)?;
    if corpus.has_explicit_splits() {
        Ok(corpus)
    } else {
        Ok(corpus.split(split, seed)?)
    }
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub checkpoint: String,
    pub report: String,
    pub manifest: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub final_neg_elbo: Option<f64>,
    pub train_neg_elbo: f64,
    pub val_p100: Option<f64>,
    pub test_p100: Option<f64>,
}

/// Train per `cfg`, writing manifest (first), report, checkpoint and the
/// split-tagged corpus into `cfg.output_dir`.
pub fn run_training(cfg: &RunConfig) -> CliResult<TrainSummary> {
    let (bow, vocab_path) = cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let paths = [
        ("manifest", out.join("manifest.json")),
        ("report", out.join("report.jsonl")),
        ("checkpoint", out.join("model.ckpt")),
        ("corpus", out.join("corpus.bow")),
        ("vocab", out.join("vocab.tsv")),
    ];
    let manifest = RunManifest {
        config: cfg.to_pairs().into_iter().collect(),
        corpus_sha256: sha256_files(&[&bow, &vocab_path])?,
        seed: cfg.train.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: paths.iter().map(|(k, p)| (k.to_string(), p.display().to_string())).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::runtime("E_IO", e.to_string()))?;
    fs::write(&paths[0].1, json + "\n")?;

    let corpus = load_corpus(&bow, &vocab_path, cfg.split, cfg.split_seed)?;
    corpus.save(&paths[3].1, &paths[4].1)?;
    let classes = corpus.num_classes();
    if cfg.train.mode == TrainMode::Supervised && classes == 0 {
        return Err(CliError::runtime("E_VALIDATION", "supervised training needs labelled documents"));
    }
    let hyper = Hyper { lambda: cfg.train.lambda, alpha: cfg.train.alpha.start, beta: cfg.train.beta };
    let model = PshModel::new(&cfg.model, corpus.vocabulary().len(), classes, hyper, &mut rng_for(cfg.train.seed, &[MODEL_INIT_STREAM]))?;
    let (model, report) = match trainer::train(model, &corpus, &cfg.train) {
        Ok(r) => r,
        Err(Error::Diverged(snap)) => {
            let path = out.join("diagnostic.json");
            let json = serde_json::to_string_pretty(&*snap).unwrap_or_default();
            fs::write(&path, json + "\n")?;
            return Err(CliError::runtime("E_DIVERGED", format!("{snap}; diagnostic snapshot at {}", path.display())));
        }
        Err(e) => return Err(e.into()),
    };
    let mut f = fs::File::create(&paths[1].1)?;
    report.write_jsonl(&mut f)?;
    let idf = corpus.idf()?;
    let inputs: Vec<_> = corpus.documents().iter().map(|d| idf.transform(d)).collect();
    let labelled = corpus.documents().iter().any(|d| !d.labels.is_empty());
    let precision = |split: Split| -> CliResult<Option<f64>> {
        if !labelled || corpus.split_indices(split).is_empty() {
            return Ok(None);
        }
        Ok(Some(split_precision(&model, &corpus, &inputs, split, cfg.train.eval_k)?))
    };
    let val_p100 = precision(Split::Validation)?;
    let test_p100 = precision(Split::Test)?;
    let train_neg_elbo = negative_elbo(&model, &corpus, Split::Train, 1, cfg.train.seed)?;
    Checkpoint::new(model, Vocabulary::clone(corpus.vocabulary()), idf)?.save(&paths[2].1)?;
    Ok(TrainSummary {
        checkpoint: paths[2].1.display().to_string(),
        report: paths[1].1.display().to_string(),
        manifest: paths[0].1.display().to_string(),
        epochs: report.records.len(),
        best_epoch: report.best_epoch,
        final_neg_elbo: report.records.last().map(|r| r.neg_elbo),
        train_neg_elbo,
        val_p100,
        test_p100,
    })
}
