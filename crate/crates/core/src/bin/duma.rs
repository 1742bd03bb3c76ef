use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use duma::config::DataSource;
use duma::model::micro_grad_check;
use duma::run::{load_source, prepare, resolve_config, run_training, select_tasks, FlatOverrides, RunManifest};
use duma::text::{dataset_stats, encode_dataset, SyntheticSpec, Vocab};
use duma::trainer::{evaluate, Checkpoint};
use duma::{Error, TensorError};

/// Toy-scale dual multi-head co-attention for multiple-choice reading comprehension.
#[derive(Parser)]
#[command(name = "duma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write manifest, vocabulary, metrics and best checkpoint.
    Train(TrainArgs),
    /// Report accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// Dump per-question predictions as JSON lines.
    Predict(PredictArgs),
    /// Central-difference gradient check of the micro model.
    Gradcheck(GradcheckArgs),
    /// Counts, option histogram and length percentiles of a dataset.
    DataStats(StatsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config with `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.peak_lr=3e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Comma-separated subset of the configured tasks.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    /// Seed for both initialisation and sampling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Re-run exactly the config recorded in a previous manifest.
    #[arg(long, conflicts_with_all = ["config", "sets", "tasks", "seed", "batch_size", "lr", "epochs", "eval_every", "max_len"])]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct SourceArgs {
    /// DREAM split file.
    #[arg(long)]
    dream: Option<PathBuf>,
    /// RACE split directory.
    #[arg(long)]
    race: Option<PathBuf>,
    /// Synthetic task `OPTIONS:SIZE:SEED[:PREFIX]`.
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<String>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file; defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    /// Configured task to read when no explicit source is given.
    #[arg(long)]
    task: Option<String>,
    /// `train` or `dev`.
    #[arg(long, default_value = "dev")]
    split: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    split: SplitArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dream: Option<PathBuf>,
    #[arg(long)]
    race: Option<PathBuf>,
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<String>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numeric = error.chain().any(|c| {
            matches!(c.downcast_ref::<Error>(), Some(Error::Numeric(_) | Error::Tensor(_)))
                || c.downcast_ref::<TensorError>().is_some()
        });
        Self {
            code: if numeric { 2 } else { 1 },
            error,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a).map_err(Failure::from),
        Command::Eval(a) => eval(a).map_err(Failure::from),
        Command::Predict(a) => predict(a).map_err(Failure::from),
        Command::Gradcheck(a) => gradcheck(a),
        Command::DataStats(a) => data_stats(a).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// Error chain joined by `: `, skipping causes a message already ends with.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let config = match &a.manifest {
        Some(path) => RunManifest::load(path)?.config,
        None => {
            let file = match &a.config {
                Some(p) => {
                    let bytes = std::fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
                    Some(serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", p.display()))?)
                }
                None => None,
            };
            let sets = a
                .sets
                .iter()
                .map(|s| {
                    s.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {s:?}"))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let flat = FlatOverrides {
                seed: a.seed,
                batch_size: a.batch_size,
                peak_lr: a.lr,
                epochs: a.epochs,
                eval_every: a.eval_every,
                max_len: a.max_len,
            };
            let mut config = resolve_config(file, &sets, &flat)?;
            if let Some(names) = &a.tasks {
                select_tasks(&mut config, names)?;
            }
            config
        }
    };
    eprintln!("resolved config:\n{}", serde_json::to_string_pretty(&config)?);
    let prepared = prepare(config)?;
    let (manifest, state) = run_training(prepared, &a.out)?;
    let best = state
        .best
        .map_or_else(|| "none".to_string(), |b| format!("{:.4} at step {}", b.accuracy, b.step));
    println!("trained {} steps; best primary dev accuracy {best}", state.step);
    println!("manifest: {}", manifest.artifacts.manifest.display());
    println!("metrics: {}", manifest.artifacts.metrics.display());
    Ok(())
}

fn parse_synthetic(spec: &str) -> anyhow::Result<SyntheticSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        bail!("synthetic spec must be OPTIONS:SIZE:SEED[:PREFIX], got {spec:?}");
    }
    let num = |s: &str, what: &str| s.parse::<u64>().with_context(|| format!("bad {what} {s:?} in synthetic spec"));
    let out = SyntheticSpec::new(num(parts[0], "option count")? as usize, num(parts[1], "size")? as usize, num(parts[2], "seed")?);
    Ok(match parts.get(3) {
        Some(prefix) => out.with_prefix(prefix),
        None => out,
    })
}

fn explicit_source(s: &SourceArgs) -> anyhow::Result<Option<DataSource>> {
    Ok(if let Some(path) = &s.dream {
        Some(DataSource::Dream { path: path.clone() })
    } else if let Some(path) = &s.race {
        Some(DataSource::Race { path: path.clone() })
    } else if let Some(spec) = &s.synthetic {
        Some(DataSource::Synthetic(parse_synthetic(spec)?))
    } else {
        None
    })
}

struct LoadedSplit {
    checkpoint: Checkpoint,
    questions: Vec<duma::text::EncodedQuestion>,
}

fn load_split(a: &SplitArgs) -> anyhow::Result<LoadedSplit> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let vocab_path = a
        .vocab
        .clone()
        .unwrap_or_else(|| a.checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"));
    let vocab = Vocab::load(&vocab_path).with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    if vocab.len() != checkpoint.model.config.vocab_size {
        bail!(
            "vocabulary {} has {} tokens but the checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            checkpoint.model.config.vocab_size
        );
    }
    let source = match explicit_source(&a.source)? {
        Some(s) => s,
        None => {
            let tasks = &checkpoint.train_config.tasks;
            let name = a.task.clone().or_else(|| checkpoint.train_config.resolved_primary());
            let task = tasks
                .iter()
                .find(|t| Some(&t.name) == name.as_ref())
                .ok_or_else(|| anyhow!("no data source given and task {name:?} is not in the checkpoint config"))?;
            match a.split.as_str() {
                "train" => task.train.clone(),
                "dev" => task.dev.clone(),
                other => bail!("unknown split {other:?}; expected train or dev"),
            }
        }
    };
    let corpus = load_source(&source)?;
    let questions = encode_dataset(&corpus.examples, &vocab, checkpoint.model.config.max_len)?;
    Ok(LoadedSplit { checkpoint, questions })
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let loaded = load_split(&a.split)?;
    let result = evaluate(&loaded.checkpoint.model, &loaded.questions)?;
    println!(
        "{}",
        serde_json::json!({"questions": loaded.questions.len(), "accuracy": result.accuracy})
    );
    Ok(())
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let loaded = load_split(&a.split)?;
    let result = evaluate(&loaded.checkpoint.model, &loaded.questions)?;
    match &a.out {
        Some(path) => {
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            duma::classifier::write_predictions(&mut file, &result.predictions)?;
            file.flush()?;
        }
        None => duma::classifier::write_predictions(&mut std::io::stdout().lock(), &result.predictions)?,
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in a.seed..a.seed + a.seeds {
        let report = micro_grad_check(seed, a.eps).map_err(|e| Failure::from(anyhow::Error::from(e)))?;
        println!(
            "seed {seed}: max rel error {:.3e} over {} scalars (param {}, elem {}: analytic {:.6e}, numeric {:.6e})",
            report.max_rel_error, report.checked, report.worst.0, report.worst.1, report.analytic, report.numeric
        );
        worst = worst.max(report.max_rel_error);
    }
    println!("worst {worst:.3e}, threshold {:.1e}, {:.1}s", a.threshold, start.elapsed().as_secs_f64());
    if worst < a.threshold {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            error: anyhow!("gradient check failed: {worst:.3e} >= {:.1e}", a.threshold),
        })
    }
}

fn data_stats(a: StatsArgs) -> anyhow::Result<()> {
    let mut sources = Vec::new();
    if let Some(p) = &a.dream {
        sources.push(("dream", DataSource::Dream { path: p.clone() }, Some(86.0)));
    }
    if let Some(p) = &a.race {
        sources.push(("race", DataSource::Race { path: p.clone() }, Some(322.0)));
    }
    if let Some(s) = &a.synthetic {
        sources.push(("synthetic", DataSource::Synthetic(parse_synthetic(s)?), None));
    }
    if sources.is_empty() {
        bail!("give at least one of --dream, --race or --synthetic");
    }
    let mut report = serde_json::Map::new();
    for (name, source, reference) in sources {
        let corpus = load_source(&source)?;
        for w in &corpus.warnings {
            eprintln!("warning: {w}");
        }
        let stats = dataset_stats(&corpus);
        if a.json {
            let mut v = serde_json::to_value(&stats)?;
            v["reference_mean_context_words"] = serde_json::json!(reference);
            report.insert(name.to_string(), v);
            continue;
        }
        println!("{name}:");
        println!("  contexts   {}", stats.contexts);
        println!("  questions  {}", stats.questions);
        let hist = |m: &std::collections::BTreeMap<usize, usize>| {
            m.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(" ")
        };
        println!("  options    {}", hist(&stats.option_counts));
        println!("  gold       {}", hist(&stats.gold_counts));
        if let Some(l) = &stats.context_words {
            print!(
                "  words      mean {:.1}  p50 {}  p90 {}  p99 {}  max {}",
                l.mean, l.p50, l.p90, l.p99, l.max
            );
            match reference {
                Some(r) => println!("  (published average {r})"),
                None => println!(),
            }
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}
