#![allow(dead_code)]

pub mod corpus;
pub mod oracle;

use duma::encoder::Dropout;
use duma::text::{
    build_vocab, encode_dataset, synthetic_task, EncodedInstance, EncodedQuestion, SyntheticSpec, Vocab, CLS, PAD, SEP,
};
use duma::trainer::TaskData;
use duma::{Model, ModelConfig, Tape, Tensor, TrainConfig};

/// Encoded synthetic questions plus the vocabulary they were built with.
pub fn synthetic_questions(options: usize, size: usize, seed: u64, max_len: usize) -> (Vocab, Vec<EncodedQuestion>) {
    let examples = synthetic_task(&SyntheticSpec::new(options, size, seed));
    let vocab = build_vocab(&examples, 1000).unwrap();
    let encoded = encode_dataset(&examples, &vocab, max_len).unwrap();
    (vocab, encoded)
}

pub fn micro_model(seed: u64) -> Model {
    Model::new(ModelConfig {
        seed,
        ..ModelConfig::micro()
    })
    .unwrap()
}

/// `[cls] ctx [sep] qa [sep]` followed by `pad` padding positions.
pub fn instance(ctx: &[usize], qa: &[usize], pad: usize) -> EncodedInstance {
    let mut token_ids = vec![CLS];
    token_ids.extend_from_slice(ctx);
    let boundary = token_ids.len();
    token_ids.push(SEP);
    token_ids.extend_from_slice(qa);
    token_ids.push(SEP);
    let real = token_ids.len();
    token_ids.extend(std::iter::repeat_n(PAD, pad));
    EncodedInstance {
        attention_mask: (0..token_ids.len()).map(|i| i < real).collect(),
        token_ids,
        boundary,
        gold: false,
        example_id: "t".into(),
    }
}

/// Encoder output of `model` for `inst`, computed in 64-bit.
pub fn encode_f64(model: &Model, inst: &EncodedInstance) -> Tensor<f64> {
    let params = model.params.cast::<f64>();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = model
        .layout
        .encoder
        .forward(&model.config, &mut tape, &bound, inst, &mut Dropout::off())
        .unwrap();
    tape.value(h).clone()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Synthetic train/dev task: `options` choices, words prefixed by `prefix`.
pub struct TaskSpecLite {
    pub name: &'static str,
    pub options: usize,
    pub train: usize,
    pub dev: usize,
    pub prefix: &'static str,
}

/// Encodes every task under one vocabulary built from all training splits.
pub fn synthetic_tasks(specs: &[TaskSpecLite], seed: u64, max_len: usize) -> (Vocab, Vec<TaskData>) {
    let raw: Vec<_> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let base = seed * 100 + 2 * i as u64;
            let train = synthetic_task(&SyntheticSpec::new(s.options, s.train, base).with_prefix(s.prefix));
            let dev = synthetic_task(&SyntheticSpec::new(s.options, s.dev, base + 1).with_prefix(s.prefix));
            (s.name, train, dev)
        })
        .collect();
    let all: Vec<_> = raw.iter().flat_map(|(_, t, _)| t.iter().cloned()).collect();
    let vocab = build_vocab(&all, 1000).unwrap();
    let tasks = raw
        .into_iter()
        .map(|(name, train, dev)| TaskData {
            name: name.into(),
            train: encode_dataset(&train, &vocab, max_len).unwrap(),
            dev: encode_dataset(&dev, &vocab, max_len).unwrap(),
        })
        .collect();
    (vocab, tasks)
}

/// Micro-sized model wide enough for `vocab`.
pub fn toy_model(vocab: &Vocab, seed: u64) -> Model {
    Model::new(ModelConfig {
        vocab_size: vocab.len(),
        seed,
        ..ModelConfig::micro()
    })
    .unwrap()
}

pub fn toy_train_config(batch_size: usize, epochs: usize, peak_lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size,
        epochs,
        peak_lr,
        seed,
        eval_every: Some(10),
        ..TrainConfig::default()
    }
}
