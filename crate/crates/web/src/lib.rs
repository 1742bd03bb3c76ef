//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function has a plain-Rust twin returning `Result<_, String>`
//! so the logic can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use duma::model::Model;
use duma::tensor::Tape;
use duma::text::{build_vocab, encode_example, McExample, TaskKind};
use duma::trainer::{linear_schedule, warmup_steps, ProportionalSampler};
use duma::ModelConfig;

const MAX_STEPS: usize = 100_000;
const MAX_DRAWS: usize = 1_000_000;

/// Learning rate used for updates `1..=total_steps`.
pub fn schedule_trace(total_steps: usize, warmup_fraction: f64, peak_lr: f64) -> Result<Vec<f64>, String> {
    if !(2..=MAX_STEPS).contains(&total_steps) {
        return Err(format!("total steps must lie in 2..={MAX_STEPS}"));
    }
    if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
        return Err("warmup fraction must lie in (0, 1)".into());
    }
    if !(peak_lr > 0.0 && peak_lr.is_finite()) {
        return Err("peak learning rate must be positive".into());
    }
    let warm = warmup_steps(total_steps, warmup_fraction);
    Ok((1..=total_steps).map(|s| linear_schedule(s, total_steps, warm, peak_lr)).collect())
}

/// Observed share of batches drawn from each task.
pub fn observed_fractions(sizes: &[u32], draws: usize, seed: u64) -> Result<Vec<f64>, String> {
    if draws == 0 || draws > MAX_DRAWS {
        return Err(format!("draws must lie in 1..={MAX_DRAWS}"));
    }
    let sizes: Vec<usize> = sizes.iter().map(|&s| s as usize).collect();
    let mut sampler = ProportionalSampler::new(&sizes, 1, seed).map_err(|e| e.to_string())?;
    let mut counts = vec![0usize; sizes.len()];
    for _ in 0..draws {
        counts[sampler.next_batch().task] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / draws as f64).collect())
}

/// Co-attention weights of one option, per head, as `[head][row][col]`.
#[derive(Debug, Clone, Serialize)]
pub struct Heatmap {
    pub context_tokens: Vec<String>,
    pub qa_tokens: Vec<String>,
    pub context_to_qa: Vec<Vec<Vec<f64>>>,
    pub qa_to_context: Vec<Vec<Vec<f64>>>,
    pub probabilities: Vec<f64>,
}

fn demo_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size,
        hidden: 16,
        encoder_layers: 2,
        encoder_heads: 2,
        ff_width: 32,
        max_len: 64,
        share_layers: true,
        duma_heads: 2,
        duma_head_dim: 8,
        seed,
        ..ModelConfig::default()
    }
}

/// Runs a freshly initialised small model on one question and returns the
/// co-attention weights of option `option`.
pub fn coattention(context: &str, question: &str, options: &[String], option: usize, seed: u64) -> Result<Heatmap, String> {
    if options.len() < 2 {
        return Err("give at least two options".into());
    }
    if option >= options.len() {
        return Err(format!("option {option} out of range"));
    }
    let ex = McExample {
        task: TaskKind::Synthetic,
        context: vec![context.to_string()],
        question: question.to_string(),
        options: options.to_vec(),
        gold: 0,
        id: "demo".into(),
    };
    let vocab = build_vocab(std::slice::from_ref(&ex), 10_000).map_err(|e| e.to_string())?;
    let config = demo_config(vocab.len(), seed);
    let instances = encode_example(&ex, &vocab, config.max_len).map_err(|e| e.to_string())?;
    let model = Model::new(config).map_err(|e| e.to_string())?;

    let question = duma::text::EncodedQuestion {
        id: ex.id.clone(),
        options: instances,
        gold: 0,
    };
    let mut tape = Tape::<f32>::new();
    let bound = model.params.bind(&mut tape);
    let (logits, traces) = model
        .layout
        .question_logits_traced(&model.config, &mut tape, &bound, &question)
        .map_err(|e| e.to_string())?;
    let probabilities = duma::OptionScores::from_logits(tape.value(logits).data().iter().map(|&v| v as f64).collect())
        .probabilities;

    let inst = &question.options[option];
    let real = inst.real_len();
    let grid = |vars: &[duma::Var]| -> Vec<Vec<Vec<f64>>> {
        vars.iter()
            .map(|&v| {
                let t = tape.value(v);
                let cols = t.shape()[1];
                t.data().chunks(cols).map(|r| r.iter().map(|&x| x as f64).collect()).collect()
            })
            .collect()
    };
    Ok(Heatmap {
        context_tokens: vocab.decode(&inst.token_ids[1..inst.boundary]),
        qa_tokens: vocab.decode(&inst.token_ids[inst.boundary + 1..real]),
        context_to_qa: grid(&traces[option].context_to_qa),
        qa_to_context: grid(&traces[option].qa_to_context),
        probabilities,
    })
}

#[wasm_bindgen]
pub fn lr_schedule(total_steps: usize, warmup_fraction: f64, peak_lr: f64) -> Result<Vec<f64>, JsError> {
    schedule_trace(total_steps, warmup_fraction, peak_lr).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sampler_fractions(sizes: Vec<u32>, draws: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    observed_fractions(&sizes, draws, seed).map_err(|e| JsError::new(&e))
}

/// `options` is newline-separated. Returns the [`Heatmap`] as JSON.
#[wasm_bindgen]
pub fn coattention_heatmap(context: &str, question: &str, options: &str, option: usize, seed: u64) -> Result<String, JsError> {
    let options: Vec<String> = options.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    let map = coattention(context, question, &options, option, seed).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&map).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_warmup() {
        let t = schedule_trace(200, 0.1, 1e-3).unwrap();
        assert_eq!(t.len(), 200);
        let peak = t.iter().cloned().fold(0.0, f64::max);
        assert_eq!(peak, 1e-3);
        assert_eq!(t.iter().position(|&l| l == peak), Some(19));
        assert!(schedule_trace(1, 0.1, 1e-3).is_err());
        assert!(schedule_trace(10, 1.5, 1e-3).is_err());
    }

    #[test]
    fn fractions_track_sizes() {
        let f = observed_fractions(&[30, 70], 20_000, 1).unwrap();
        assert!((f[0] - 0.3).abs() < 0.02 && (f[1] - 0.7).abs() < 0.02, "{f:?}");
        assert!(observed_fractions(&[0, 5], 10, 1).is_err());
        assert!(observed_fractions(&[], 10, 1).is_err());
    }

    #[test]
    fn heatmap_rows_are_distributions() {
        let opts = vec!["in the park".to_string(), "at home".to_string(), "at school".to_string()];
        let h = coattention("M: Where were you ? W: I was at home all day .", "Where was the woman ?", &opts, 1, 3).unwrap();
        assert_eq!(h.context_to_qa.len(), 2);
        assert_eq!(h.context_to_qa[0].len(), h.context_tokens.len());
        assert_eq!(h.context_to_qa[0][0].len(), h.qa_tokens.len());
        assert_eq!(h.qa_to_context[1].len(), h.qa_tokens.len());
        for head in h.context_to_qa.iter().chain(&h.qa_to_context) {
            for row in head {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            }
        }
        assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(h.context_tokens.first().map(String::as_str), Some("m"));
        assert!(coattention("c", "q", &opts[..1], 0, 0).is_err());
    }
}
