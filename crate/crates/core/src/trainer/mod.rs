//! Multi-task training: proportional single-task batches, decoupled-decay
//! Adam under a linear warmup/decay schedule, global-norm clipping,
//! periodic dev evaluation and best-checkpoint retention.

mod checkpoint;
mod optim;
mod sampler;
mod schedule;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, FORMAT_VERSION, MAGIC};
pub use optim::{clip_grad_norm, AdamState, AdamW, ClipOutcome};
pub use sampler::{Batch, ProportionalSampler};
pub use schedule::{linear_schedule, warmup_steps};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::{accuracy, PredictionRecord};
use crate::config::TrainConfig;
use crate::encoder::Dropout;
use crate::model::Model;
use crate::tensor::{Tape, Tensor};
use crate::text::EncodedQuestion;
use crate::{Error, Result};

/// Encoded train and dev splits of one task.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub name: String,
    pub train: Vec<EncodedQuestion>,
    pub dev: Vec<EncodedQuestion>,
}

/// One line of the metrics log, written per task at every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub task: String,
    pub lr: f64,
    /// Mean batch loss of this task's batches since the previous
    /// evaluation; `None` when no batch of the task was drawn.
    pub train_loss: Option<f64>,
    pub dev_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub task: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub accuracy: f64,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub moments: AdamState,
    pub step: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub best: Option<BestRecord>,
    pub metrics: Vec<MetricsRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainState {
    /// Metrics log exactly as written to `metrics.jsonl`.
    pub fn metrics_jsonl(&self) -> String {
        self.metrics.iter().map(metrics_line).collect()
    }
}

fn metrics_line(r: &MetricsRecord) -> String {
    let mut s = serde_json::to_string(r).expect("metrics serialise");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<PredictionRecord>,
}

/// Forward-only pass over a split with dropout off.
pub fn evaluate(model: &Model, split: &[EncodedQuestion]) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let mut predictions = Vec::with_capacity(split.len());
    for q in split {
        let scores = model.predict(q)?;
        predictions.push(PredictionRecord {
            example_id: q.id.clone(),
            predicted: scores.predicted,
            gold: q.gold,
            probabilities: scores.probabilities,
        });
    }
    let preds: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let golds: Vec<usize> = predictions.iter().map(|p| p.gold).collect();
    Ok(Evaluation {
        accuracy: accuracy(&preds, &golds)?,
        predictions,
    })
}

/// `epochs × ⌈Σ train sizes / batch⌉`.
pub fn total_steps(config: &TrainConfig, train_sizes: &[usize]) -> usize {
    let examples: usize = train_sizes.iter().sum();
    config.epochs * examples.div_ceil(config.batch_size)
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub metrics: PathBuf,
    pub best_checkpoint: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.jsonl"),
            best_checkpoint: dir.join("best.ckpt"),
        }
    }
}

/// Runs the full training loop.
///
/// `config.tasks` only names the tasks; the encoded data comes in through
/// `tasks`, matched by position and name.
pub fn train(config: &TrainConfig, mut model: Model, tasks: &[TaskData], out: Option<&RunPaths>) -> Result<TrainState> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::Config("no tasks to train on".into()));
    }
    if let Some(t) = tasks.iter().find(|t| t.dev.is_empty()) {
        return Err(Error::Config(format!("task {} has an empty dev split", t.name)));
    }
    let primary = match &config.primary_task {
        Some(p) => p.clone(),
        None => tasks
            .iter()
            .find(|t| t.name == "dream")
            .unwrap_or(&tasks[0])
            .name
            .clone(),
    };
    let primary_idx = tasks
        .iter()
        .position(|t| t.name == primary)
        .ok_or_else(|| Error::Config(format!("primary task {primary} has no data")))?;

    let sizes: Vec<usize> = tasks.iter().map(|t| t.train.len()).collect();
    let mut sampler = ProportionalSampler::new(&sizes, config.batch_size, config.seed)?;
    let total = total_steps(config, &sizes);
    let warmup = warmup_steps(total, config.warmup_fraction);
    let eval_every = config.resolved_eval_every(tasks.len());
    let optimizer = AdamW::new(config.weight_decay);
    let mut moments = AdamState::zeros(&model.params);
    let started = Instant::now();

    let mut metrics_file = match out {
        Some(paths) => Some(std::io::BufWriter::new(std::fs::File::create(&paths.metrics).map_err(|source| Error::Io {
            context: format!("creating {}", paths.metrics.display()),
            source,
        })?)),
        None => None,
    };

    let mut state_metrics = Vec::new();
    let mut steps = Vec::with_capacity(total);
    let mut best: Option<BestRecord> = None;
    let mut loss_sums = vec![(0.0f64, 0usize); tasks.len()];

    for step in 1..=total {
        let batch = sampler.next_batch();
        let task = &tasks[batch.task];
        let questions: Vec<&EncodedQuestion> = batch.indices.iter().map(|&i| &task.train[i]).collect();

        let mut tape = Tape::<f32>::new();
        let bound = model.params.bind(&mut tape);
        let mut dropout = Dropout::new(model.config.dropout, config.seed ^ (step as u64).rotate_left(32));
        let loss = model.layout.batch_loss(&model.config, &mut tape, &bound, &questions, &mut dropout)?;
        let loss_value = tape.value(loss).item() as f64;
        if !loss_value.is_finite() {
            let ids: Vec<&str> = questions.iter().map(|q| q.id.as_str()).collect();
            return Err(Error::Numeric(format!(
                "non-finite loss {loss_value} at step {step} on task {} (examples {ids:?})",
                task.name
            )));
        }
        let mut grads_table = tape.backward(loss)?;
        let mut grads: Vec<Tensor<f32>> = model
            .params
            .iter()
            .zip(bound.vars())
            .map(|(p, &v)| grads_table.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())))
            .collect();
        let clip = clip_grad_norm(&mut grads, config.clip_norm)?;
        let lr = linear_schedule(step, total, warmup, config.peak_lr);
        optimizer.step(&mut model.params, &grads, &mut moments, step as u64, lr)?;

        steps.push(StepRecord {
            step,
            task: batch.task,
            lr,
            loss: loss_value,
            grad_norm: clip.norm,
            clipped_norm: clip.clipped_norm(),
        });
        loss_sums[batch.task].0 += loss_value;
        loss_sums[batch.task].1 += 1;

        if step % eval_every == 0 || step == total {
            let mut primary_acc = 0.0;
            for (ti, t) in tasks.iter().enumerate() {
                let eval = evaluate(&model, &t.dev)?;
                if ti == primary_idx {
                    primary_acc = eval.accuracy;
                }
                let (sum, n) = std::mem::take(&mut loss_sums[ti]);
                let record = MetricsRecord {
                    step,
                    task: t.name.clone(),
                    lr,
                    train_loss: (n > 0).then(|| sum / n as f64),
                    dev_accuracy: eval.accuracy,
                    wall_time: config.log_wall_time.then(|| started.elapsed().as_secs_f64()),
                };
                if let Some(f) = metrics_file.as_mut() {
                    f.write_all(metrics_line(&record).as_bytes())
                        .and_then(|_| f.flush())
                        .map_err(|source| Error::Io {
                            context: "writing metrics log".into(),
                            source,
                        })?;
                }
                state_metrics.push(record);
            }
            if best.is_none_or(|b| primary_acc > b.accuracy) {
                best = Some(BestRecord {
                    accuracy: primary_acc,
                    step,
                });
                if let Some(paths) = out {
                    Checkpoint {
                        model: model.clone(),
                        train_config: config.clone(),
                        step,
                        dev_accuracy: Some(primary_acc),
                        moments: Some(moments.clone()),
                    }
                    .save(&paths.best_checkpoint)?;
                }
            }
        }
    }

    Ok(TrainState {
        model,
        moments,
        step: total,
        total_steps: total,
        warmup_steps: warmup,
        best,
        metrics: state_metrics,
        steps,
    })
}
