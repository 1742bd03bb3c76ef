//! Reproducible runs: config resolution, data loading, fingerprints and
//! the run manifest written before the first training step.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::config::{DataSource, RunConfig};
use crate::model::Model;
use crate::text::{build_vocab, encode_dataset, load_dream, load_race, synthetic_task, Corpus, Vocab};
use crate::trainer::{train, RunPaths, TaskData, TrainState};
use crate::{Error, Result};

/// Command-line values that override everything else.
#[derive(Debug, Clone, Default)]
pub struct FlatOverrides {
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub peak_lr: Option<f64>,
    pub epochs: Option<usize>,
    pub eval_every: Option<usize>,
    pub max_len: Option<usize>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_dotted(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("cannot set {key}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

/// Defaults < config file < `key.path=value` overrides < flat flags.
pub fn resolve_config(file: Option<Value>, sets: &[(String, String)], flat: &FlatOverrides) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
    if let Some(f) = file {
        merge(&mut value, f);
    }
    for (k, v) in sets {
        set_dotted(&mut value, k, v)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = flat.seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
    }
    if let Some(b) = flat.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = flat.peak_lr {
        cfg.train.peak_lr = lr;
    }
    if let Some(e) = flat.epochs {
        cfg.train.epochs = e;
    }
    if let Some(e) = flat.eval_every {
        cfg.train.eval_every = Some(e);
    }
    if let Some(l) = flat.max_len {
        cfg.model.max_len = l;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn load_source(source: &DataSource) -> Result<Corpus> {
    Ok(match source {
        DataSource::Dream { path } => load_dream(path)?,
        DataSource::Race { path } => load_race(path)?,
        DataSource::Synthetic(spec) => {
            if spec.options < 2 || spec.pool < spec.options || spec.size == 0 {
                return Err(Error::Config(format!(
                    "synthetic task needs options >= 2, pool >= options and size > 0 (got {} options, pool {}, size {})",
                    spec.options, spec.pool, spec.size
                )));
            }
            let examples = synthetic_task(spec);
            Corpus {
                contexts: examples.len(),
                examples,
                warnings: Vec::new(),
            }
        }
    })
}

fn hash_source(source: &DataSource, corpus: &Corpus) -> Result<String> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io {
            context: format!("hashing {}", path.display()),
            source,
        }
    };
    let mut h = Sha256::new();
    match source {
        DataSource::Dream { path } => h.update(std::fs::read(path).map_err(io(path))?),
        DataSource::Race { path } => {
            for entry in WalkDir::new(path).sort_by_file_name() {
                let entry = entry.map_err(|e| Error::Io {
                    context: format!("hashing {}", path.display()),
                    source: e.into(),
                })?;
                if entry.file_type().is_file() {
                    let rel = entry.path().strip_prefix(path).unwrap_or(entry.path());
                    h.update(rel.to_string_lossy().as_bytes());
                    h.update([0]);
                    h.update(std::fs::read(entry.path()).map_err(io(entry.path()))?);
                }
            }
        }
        DataSource::Synthetic(_) => {
            h.update(serde_json::to_vec(&corpus.examples).expect("examples serialise"));
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub task: String,
    pub split: String,
    pub source: DataSource,
    pub contexts: usize,
    pub questions: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub manifest: PathBuf,
    pub vocab: PathBuf,
    pub metrics: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub datasets: Vec<DatasetFingerprint>,
    pub seed: u64,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            context: format!("reading manifest {}", path.display()),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("bad manifest {}: {e}", path.display())))
    }
}

/// Loaded, fingerprinted and encoded data for a resolved config.
pub struct PreparedRun {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub tasks: Vec<TaskData>,
    pub datasets: Vec<DatasetFingerprint>,
}

/// Keeps only the named tasks, in the given order.
pub fn select_tasks(config: &mut RunConfig, names: &[String]) -> Result<()> {
    let mut picked = Vec::with_capacity(names.len());
    for n in names {
        let t = config
            .train
            .tasks
            .iter()
            .find(|t| &t.name == n)
            .ok_or_else(|| Error::Config(format!("task {n:?} is not defined in the config")))?;
        picked.push(t.clone());
    }
    config.train.tasks = picked;
    if let Some(p) = &config.train.primary_task {
        if !names.contains(p) {
            config.train.primary_task = None;
        }
    }
    Ok(())
}

/// Loads every split, builds the vocabulary over all training splits and
/// encodes. The model's `vocab_size` is set to the built vocabulary size.
pub fn prepare(mut config: RunConfig) -> Result<PreparedRun> {
    if config.train.tasks.is_empty() {
        return Err(Error::Config("no tasks configured".into()));
    }
    let mut loaded = Vec::new();
    let mut datasets = Vec::new();
    for t in &config.train.tasks {
        let train = load_source(&t.train)?;
        let dev = load_source(&t.dev)?;
        for (split, source, corpus) in [("train", &t.train, &train), ("dev", &t.dev, &dev)] {
            datasets.push(DatasetFingerprint {
                task: t.name.clone(),
                split: split.into(),
                source: source.clone(),
                contexts: corpus.contexts,
                questions: corpus.examples.len(),
                sha256: hash_source(source, corpus)?,
            });
        }
        loaded.push((t.name.clone(), train, dev));
    }
    let all_train: Vec<_> = loaded.iter().flat_map(|(_, tr, _)| tr.examples.iter().cloned()).collect();
    let vocab = build_vocab(&all_train, config.model.vocab_size)?;
    config.model.vocab_size = vocab.len().max(5);
    let max_len = config.model.max_len;
    let tasks = loaded
        .into_iter()
        .map(|(name, train, dev)| {
            Ok(TaskData {
                name,
                train: encode_dataset(&train.examples, &vocab, max_len)?,
                dev: encode_dataset(&dev.examples, &vocab, max_len)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedRun {
        config,
        vocab,
        tasks,
        datasets,
    })
}

/// Writes vocabulary and manifest into `out_dir`, then trains.
pub fn run_training(prepared: PreparedRun, out_dir: &Path) -> Result<(RunManifest, TrainState)> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        context: format!("creating {}", out_dir.display()),
        source,
    })?;
    let paths = RunPaths::in_dir(out_dir);
    let manifest = RunManifest {
        config: prepared.config.clone(),
        datasets: prepared.datasets.clone(),
        seed: prepared.config.train.seed,
        artifacts: Artifacts {
            manifest: out_dir.join("manifest.json"),
            vocab: out_dir.join("vocab.txt"),
            metrics: paths.metrics.clone(),
            best_checkpoint: paths.best_checkpoint.clone(),
        },
    };
    prepared.vocab.save(&manifest.artifacts.vocab)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&manifest.artifacts.manifest, json + "\n").map_err(|source| Error::Io {
        context: "writing manifest".into(),
        source,
    })?;
    let model = Model::new(prepared.config.model.clone())?;
    let state = train(&prepared.config.train, model, &prepared.tasks, Some(&paths))?;
    Ok((manifest, state))
}
