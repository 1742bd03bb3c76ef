//! Encoder → co-attention → classifier, composed over a shared parameter set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{cross_entropy, score_options, ClassifierParams, OptionScores};
use crate::config::ModelConfig;
use crate::duma::{DumaParams, DumaTrace};
use crate::encoder::{Dropout, EncoderParams};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Scalar, Tape, Var};
use crate::text::EncodedQuestion;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub encoder: EncoderParams,
    pub duma: DumaParams,
    pub classifier: ClassifierParams,
}

/// A full multiple-choice model: configuration, layout and `f32` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub params: ParamSet<f32>,
}

impl Model {
    /// Freshly initialised model, deterministic in `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::init(&mut params, &mut rng, &config);
        let duma = DumaParams::init(&mut params, &mut rng, &config);
        let classifier = ClassifierParams::init(&mut params, &mut rng, 2 * config.hidden);
        Ok(Self {
            config,
            layout: ModelLayout {
                encoder,
                duma,
                classifier,
            },
            params,
        })
    }

    /// Same model with every encoder depth aliased to block 0's weights.
    pub fn share_layers(&self) -> Result<Self> {
        let mut config = self.config.clone();
        config.share_layers = true;
        let mut shared = Self::new(config)?;
        shared.copy_matching_from(self)?;
        Ok(shared)
    }

    /// Copies every parameter whose name exists in `other`.
    pub fn copy_matching_from(&mut self, other: &Model) -> Result<()> {
        for p in self.params.iter_mut() {
            let id = other
                .params
                .find(&p.name)
                .ok_or_else(|| Error::Config(format!("parameter {} missing from source model", p.name)))?;
            let src = other.params.get(id);
            if src.shape() != p.value.shape() {
                return Err(Error::Config(format!("shape mismatch for parameter {}", p.name)));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    pub fn predict(&self, question: &EncodedQuestion) -> Result<OptionScores> {
        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape);
        let logits = self.layout.question_logits(&self.config, &mut tape, &bound, question, &mut Dropout::off())?;
        Ok(OptionScores::from_logits(
            tape.value(logits).data().iter().map(|&v| v as f64).collect(),
        ))
    }
}

impl ModelLayout {
    /// `[N]` option logits for one question.
    pub fn question_logits<T: Scalar>(
        &self,
        cfg: &ModelConfig,
        tape: &mut Tape<T>,
        bound: &Bound,
        question: &EncodedQuestion,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let fused = question
            .options
            .iter()
            .map(|inst| {
                let hidden = self.encoder.forward(cfg, tape, bound, inst, dropout)?;
                self.duma.forward(tape, bound, hidden, inst)
            })
            .collect::<Result<Vec<_>>>()?;
        score_options(tape, &fused, bound[self.classifier.weight], None)
    }

    /// Per-option co-attention traces alongside the logits.
    pub fn question_logits_traced<T: Scalar>(
        &self,
        cfg: &ModelConfig,
        tape: &mut Tape<T>,
        bound: &Bound,
        question: &EncodedQuestion,
    ) -> Result<(Var, Vec<DumaTrace>)> {
        let mut traces = Vec::new();
        let mut fused = Vec::new();
        for inst in &question.options {
            let hidden = self.encoder.forward(cfg, tape, bound, inst, &mut Dropout::off())?;
            let (f, t) = self.duma.forward_traced(tape, bound, hidden, inst)?;
            fused.push(f);
            traces.push(t);
        }
        let logits = score_options(tape, &fused, bound[self.classifier.weight], None)?;
        Ok((logits, traces))
    }

    /// Mean cross-entropy over `questions` (each question weighs equally).
    pub fn batch_loss<T: Scalar>(
        &self,
        cfg: &ModelConfig,
        tape: &mut Tape<T>,
        bound: &Bound,
        questions: &[&EncodedQuestion],
        dropout: &mut Dropout,
    ) -> Result<Var> {
        if questions.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let losses = questions
            .iter()
            .map(|q| {
                let logits = self.question_logits(cfg, tape, bound, q, dropout)?;
                cross_entropy(tape, logits, q.gold)
            })
            .collect::<Result<Vec<_>>>()?;
        let joined = tape.concat(&losses)?;
        let total = tape.sum(joined)?;
        Ok(tape.scale(total, T::from_f64_lossy(1.0 / questions.len() as f64))?)
    }
}

/// Central-difference check of the full model's mean question loss, run
/// in 64-bit on a copy of the weights.
pub fn grad_check_model(
    model: &Model,
    questions: &[EncodedQuestion],
    eps: f64,
) -> Result<crate::tensor::GradCheckReport> {
    let refs: Vec<&EncodedQuestion> = questions.iter().collect();
    let params = model.params.cast::<f64>().values();
    let report = crate::tensor::grad_check(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            model
                .layout
                .batch_loss(&model.config, tape, &bound, &refs, &mut Dropout::off())
                .map_err(|e| match e {
                    Error::Tensor(t) => t,
                    other => crate::TensorError::Graph(other.to_string()),
                })
        },
        &params,
        eps,
    )?;
    Ok(report)
}

/// Gradient check of the micro model (`ModelConfig::micro`) on one
/// synthetic 3-option question, both drawn from `seed`.
pub fn micro_grad_check(seed: u64, eps: f64) -> Result<crate::tensor::GradCheckReport> {
    use crate::text::{build_vocab, encode_dataset, synthetic_task, SyntheticSpec};
    let config = ModelConfig {
        seed,
        ..ModelConfig::micro()
    };
    let examples = synthetic_task(&SyntheticSpec::new(3, 1, seed));
    let vocab = build_vocab(&examples, config.vocab_size)?;
    let questions = encode_dataset(&examples, &vocab, config.max_len)?;
    grad_check_model(&Model::new(config)?, &questions, eps)
}
