//! Shared linear option scorer, softmax over options, and cross-entropy.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{xavier_uniform, ParamId, ParamSet};
use crate::tensor::{Scalar, Tape, TensorError, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierParams {
    /// `[2d × 1]`
    pub weight: ParamId,
}

impl ClassifierParams {
    pub fn init<R: Rng>(store: &mut ParamSet<f32>, rng: &mut R, fused_width: usize) -> Self {
        Self {
            weight: store.add("classifier.weight", xavier_uniform(rng, fused_width, 1), true),
        }
    }
}

/// `logit_i = w·fused_i + b` for every option; returns an `[N]` vector.
///
/// The same `(w, b)` scores any number of options. The model itself passes
/// no bias: a shift shared by every option cancels in the softmax, so its
/// gradient is identically zero.
pub fn score_options<T: Scalar>(tape: &mut Tape<T>, fused: &[Var], weight: Var, bias: Option<Var>) -> Result<Var> {
    if fused.len() < 2 {
        return Err(Error::Config(format!("need at least 2 options, got {}", fused.len())));
    }
    let width = tape.value(weight).shape()[0];
    for &f in fused {
        if tape.value(f).len() != width {
            return Err(TensorError::Dimension {
                op: "score_options",
                left: tape.value(f).shape().to_vec(),
                right: tape.value(weight).shape().to_vec(),
            }
            .into());
        }
    }
    let stacked = tape.concat_rows(fused)?;
    let logits = tape.matmul(stacked, weight)?;
    let logits = match bias {
        Some(b) => tape.add_row(logits, b)?,
        None => logits,
    };
    Ok(tape.reshape(logits, vec![fused.len()])?)
}

/// `-ln softmax(logits)[gold]`, computed with log-sum-exp.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, gold: usize) -> Result<Var> {
    let n = tape.value(logits).len();
    if gold >= n {
        return Err(Error::Label { gold, options: n });
    }
    Ok(tape.cross_entropy(logits, gold)?)
}

/// Scores of one question's option set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScores {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

impl OptionScores {
    /// Softmax of `logits`; ties in the argmax go to the lowest index.
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probabilities = exps.iter().map(|e| e / total).collect();
        let mut predicted = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[predicted] {
                predicted = i;
            }
        }
        Self {
            logits,
            probabilities,
            predicted,
        }
    }

    pub fn loss(&self, gold: usize) -> Result<f64> {
        cross_entropy_value(&self.logits, gold)
    }
}

pub fn cross_entropy_value(logits: &[f64], gold: usize) -> Result<f64> {
    if gold >= logits.len() {
        return Err(Error::Label {
            gold,
            options: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[gold])
}

/// Exact-match fraction.
pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Config("accuracy over an empty set".into()));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub predicted: usize,
    pub gold: usize,
    pub probabilities: Vec<f64>,
}

pub fn write_predictions<W: Write>(out: &mut W, records: &[PredictionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
