//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Set `DUMA_DREAM_DIR` (holding `train.json`, `dev.json`, `test.json`) and
//! `DUMA_RACE_DIR` (the unpacked release root) to check the data layer on
//! the real downloads; otherwise generated stand-ins of the same shape are
//! used.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::corpus::{write_dream, write_race, DREAM_DIALOGUES, DREAM_QUESTIONS, RACE_PASSAGES, RACE_QUESTIONS};
use common::oracle::{case, coattend_oracle, run_coattend};
use common::{instance, max_abs_diff, synthetic_tasks, toy_model, toy_train_config, TaskSpecLite};
use duma::classifier::{cross_entropy, OptionScores};
use duma::config::{DataSource, RunConfig, TaskSpec};
use duma::model::micro_grad_check;
use duma::params::ParamSet;
use duma::run::{prepare, run_training, RunManifest};
use duma::tensor::Tensor;
use duma::text::{
    build_vocab, dataset_stats, encode_dataset, load_dream, load_race, synthetic_task, Corpus, EncodedQuestion, SyntheticSpec,
};
use duma::trainer::{evaluate, train, AdamState, AdamW, Checkpoint, ProportionalSampler};
use duma::{Model, ModelConfig, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const PAD_TOL: f64 = 1e-6;
const SOFTMAX_TOL: f64 = 1e-6;
const COATTEND_TOL: f64 = 1e-6;
const CE_TOL: f64 = 1e-9;
const CLIP_TOL: f64 = 1e-6;
const ADAM_REL_TOL: f64 = 0.05;
const FRACTION_TOL: f64 = 0.02;
const CHANCE_TOL: f64 = 0.05;

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..5 {
        let r = micro_grad_check(seed, GRAD_EPS).map_err(|e| e.to_string())?;
        ensure!(r.max_rel_error < GRAD_TOL, "seed {seed}: rel error {:.3e} at {:?}", r.max_rel_error, r.worst);
        worst = worst.max(r.max_rel_error);
        checked = r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("5 seeds x {checked} scalars, worst rel error {worst:.2e} < {GRAD_TOL:.0e}, {secs:.1}s"))
}

fn logits_f64(model: &Model, q: &EncodedQuestion) -> Vec<f64> {
    let params = model.params.cast::<f64>();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let z = model
        .layout
        .question_logits(&model.config, &mut tape, &bound, q, &mut duma::encoder::Dropout::off())
        .unwrap();
    tape.value(z).data().to_vec()
}

fn architectural_invariants() -> Outcome {
    let model = Model::new(ModelConfig::micro()).unwrap();
    // fused width
    let inst = instance(&[5, 6, 7], &[8, 9, 10], 3);
    let params = model.params.cast::<f64>();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = model
        .layout
        .encoder
        .forward(&model.config, &mut tape, &bound, &inst, &mut duma::encoder::Dropout::off())
        .unwrap();
    let fused = model.layout.duma.forward(&mut tape, &bound, h, &inst).unwrap();
    let width = tape.value(fused).len();
    ensure!(width == 2 * model.config.hidden, "fused width {width}");

    // padding perturbation on a whole question
    let q = EncodedQuestion {
        id: "p".into(),
        options: vec![instance(&[5, 6], &[8, 9], 4), instance(&[5, 6], &[10, 11, 12], 3), instance(&[5, 6], &[13], 5)],
        gold: 0,
    };
    let mut noisy = q.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for o in &mut noisy.options {
        let real = o.real_len();
        o.token_ids[real..].iter_mut().for_each(|t| *t = rng.random_range(4..32));
    }
    let pad_diff = max_abs_diff(&logits_f64(&model, &q), &logits_f64(&model, &noisy));
    ensure!(pad_diff < PAD_TOL, "padding changed logits by {pad_diff:.3e}");

    // masked softmax
    let mut softmax_err = 0.0f64;
    for _ in 0..200 {
        let (rows, cols) = (rng.random_range(1..6), rng.random_range(1..10));
        let mut mask: Vec<bool> = (0..cols).map(|_| rng.random_bool(0.6)).collect();
        mask[rng.random_range(0..cols)] = true;
        let data = (0..rows * cols).map(|_| rng.random_range(-40.0..40.0)).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::matrix(rows, cols, data).unwrap());
        let p = tape.masked_softmax(x, &mask).unwrap();
        for row in tape.value(p).data().chunks(cols) {
            softmax_err = softmax_err.max((row.iter().sum::<f64>() - 1.0).abs());
            ensure!(row.iter().zip(&mask).all(|(v, m)| *m || *v == 0.0), "masked entry not exactly zero");
        }
    }
    ensure!(softmax_err < SOFTMAX_TOL, "row sum off by {softmax_err:.3e}");

    // option permutation equivariance
    let perm = [2usize, 0, 1];
    let mut permuted = q.clone();
    permuted.options = perm.iter().map(|&i| q.options[i].clone()).collect();
    let a = OptionScores::from_logits(logits_f64(&model, &q));
    let b = OptionScores::from_logits(logits_f64(&model, &permuted));
    for (k, &i) in perm.iter().enumerate() {
        ensure!((a.probabilities[i] - b.probabilities[k]).abs() < 1e-12, "permutation changed scores");
    }
    ensure!(perm[b.predicted] == a.predicted, "prediction did not follow permutation");
    Ok(format!(
        "width {width} = 2d, padding diff {pad_diff:.1e}, softmax row error {softmax_err:.1e}, permutation equivariant"
    ))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for seed in 0..300 {
        let (lq, lk, d, heads, dk) = (
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=4),
            rng.random_range(1..=8),
        );
        let c = case(seed, lq, lk, d, heads, dk);
        let want = coattend_oracle(&c.x, &c.qmask, &c.y, &c.kmask, [&c.w[0], &c.w[1], &c.w[2], &c.w[3]], heads, dk);
        worst = worst.max(max_abs_diff(&run_coattend(&c), &want));
    }
    ensure!(worst < COATTEND_TOL, "coattend differs from oracle by {worst:.3e}");
    let mut ce_worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=6);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-15.0..15.0)).collect();
        let gold = rng.random_range(0..n);
        let want = logits.iter().map(|z| z.exp()).sum::<f64>().ln() - logits[gold];
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::vector(logits));
        let l = cross_entropy(&mut tape, z, gold).unwrap();
        ce_worst = ce_worst.max((tape.value(l).item() - want).abs());
    }
    ensure!(ce_worst < CE_TOL, "cross entropy differs by {ce_worst:.3e}");
    Ok(format!("coattend max diff {worst:.1e} over 300 shapes, cross-entropy max diff {ce_worst:.1e}"))
}

fn optimization_recipe() -> Outcome {
    let (vocab, tasks) = synthetic_tasks(
        &[TaskSpecLite {
            name: "toy",
            options: 3,
            train: 20,
            dev: 6,
            prefix: "s",
        }],
        1,
        16,
    );
    let mut cfg = toy_train_config(1, 25, 3e-2, 5);
    cfg.eval_every = Some(250);
    let state = train(&cfg, toy_model(&vocab, 5), &tasks, None).map_err(|e| e.to_string())?;
    ensure!(state.steps.len() == 500, "{} steps", state.steps.len());
    let peak = state.steps.iter().map(|s| s.lr).fold(0.0, f64::max);
    let peak_step = state.steps.iter().find(|s| s.lr == peak).unwrap().step;
    ensure!(peak == cfg.peak_lr, "peak lr {peak}");
    ensure!(peak_step * 10 == state.total_steps, "peak at step {peak_step} of {}", state.total_steps);
    for w in state.steps.windows(3) {
        if w[1].step != peak_step {
            let second = w[2].lr - 2.0 * w[1].lr + w[0].lr;
            ensure!(second.abs() < 1e-15, "lr trace bends at step {}", w[1].step);
        }
    }
    let max_clipped = state.steps.iter().map(|s| s.clipped_norm).fold(0.0, f64::max);
    let clipped = state.steps.iter().filter(|s| s.grad_norm > cfg.clip_norm).count();
    ensure!(max_clipped <= 1.0 + CLIP_TOL, "post-clip norm {max_clipped}");
    ensure!(clipped > 0, "clipping never engaged");

    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let init: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.add("w", Tensor::from_f64(vec![64], &init).unwrap(), true);
    let grad: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
    let grads = vec![Tensor::from_f64(vec![64], &grad).unwrap()];
    let mut moments = AdamState::zeros(&params);
    let lr = 1e-5;
    AdamW::new(0.0).step(&mut params, &grads, &mut moments, 1, lr).unwrap();
    let worst_move = params.iter().next().unwrap().value.data().iter().zip(&init).map(|(a, b)| ((*a as f64 - b).abs() - lr).abs() / lr).fold(0.0, f64::max);
    ensure!(worst_move <= ADAM_REL_TOL, "first step off by {:.1}%", 100.0 * worst_move);
    Ok(format!(
        "peak {peak} at step {peak_step}/{}, max post-clip norm {max_clipped:.6} ({clipped} steps clipped), first Adam step within {:.2}% of lr",
        state.total_steps,
        100.0 * worst_move
    ))
}

fn multitask_mechanics() -> Outcome {
    let mut sampler = ProportionalSampler::new(&[30, 70], 8, 11).map_err(|e| e.to_string())?;
    let draws = 10_000;
    let first = (0..draws).filter(|_| sampler.next_batch().task == 0).count() as f64 / draws as f64;
    ensure!((first - 0.3).abs() <= FRACTION_TOL, "fractions {first:.4}/{:.4}", 1.0 - first);

    let start = Instant::now();
    let (vocab, tasks) = synthetic_tasks(
        &[
            TaskSpecLite {
                name: "three",
                options: 3,
                train: 60,
                dev: 30,
                prefix: "a",
            },
            TaskSpecLite {
                name: "four",
                options: 4,
                train: 60,
                dev: 30,
                prefix: "b",
            },
        ],
        3,
        16,
    );
    let cfg = toy_train_config(8, 20, 3e-3, 3);
    let state = train(&cfg, toy_model(&vocab, 3), &tasks, None).map_err(|e| e.to_string())?;
    ensure!(state.step <= 1000, "{} steps", state.step);
    let reached = |task: &str| state.metrics.iter().find(|m| m.task == task && m.dev_accuracy == 1.0).map(|m| m.step);
    let (a, b) = (reached("three"), reached("four"));
    ensure!(a.is_some() && b.is_some(), "dev accuracy 1.0 not reached: {a:?} {b:?}");
    let last: Vec<f64> = state.metrics.iter().rev().take(2).map(|m| m.dev_accuracy).collect();
    ensure!(last == [1.0, 1.0], "final dev accuracies {last:?}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "took {secs:.1}s");
    Ok(format!(
        "fractions {first:.4}/{:.4}; joint 3+4 option training reached 1.0 at steps {}/{} of {}, {secs:.1}s",
        1.0 - first,
        a.unwrap(),
        b.unwrap(),
        state.step
    ))
}

fn overfit_sanity() -> Outcome {
    let examples = synthetic_task(&SyntheticSpec::new(3, 50, 21));
    let vocab = build_vocab(&examples, 1000).unwrap();
    let train_set = encode_dataset(&examples, &vocab, 16).unwrap();
    let tasks = vec![duma::trainer::TaskData {
        name: "toy".into(),
        train: train_set.clone(),
        // dev = train, so the logged accuracy is training accuracy
        dev: train_set,
    }];
    let cfg = toy_train_config(10, 40, 3e-3, 21);
    let state = train(&cfg, toy_model(&vocab, 21), &tasks, None).map_err(|e| e.to_string())?;
    ensure!(state.step == 200, "{} steps", state.step);
    let hit = state.metrics.iter().find(|m| m.dev_accuracy == 1.0).map(|m| m.step);
    ensure!(hit.is_some(), "train accuracy never reached 1.0");
    let windows: Vec<f64> = state.steps.chunks(20).map(|w| w.iter().map(|s| s.loss).sum::<f64>() / w.len() as f64).collect();
    ensure!(windows.windows(2).all(|p| p[1] <= p[0]), "20-step mean loss rose: {windows:?}");

    let spec = SyntheticSpec {
        pool: 200,
        ..SyntheticSpec::new(3, 1200, 22)
    };
    let balanced = synthetic_task(&spec);
    let vocab = build_vocab(&balanced, 10_000).unwrap();
    let qs = encode_dataset(&balanced, &vocab, 16).unwrap();
    let untrained = toy_model(&vocab, 0);
    let acc = evaluate(&untrained, &qs).unwrap().accuracy;
    ensure!((acc - 1.0 / 3.0).abs() <= CHANCE_TOL, "untrained accuracy {acc:.4}");
    Ok(format!("train accuracy 1.0 at step {} of 200, 20-step mean loss non-increasing; untrained accuracy {acc:.4} on 1200 questions", hit.unwrap()))
}

struct DataSources {
    dream: Vec<Corpus>,
    race: Corpus,
    origin: &'static str,
    _scratch: Option<tempfile::TempDir>,
}

fn data_sources() -> Result<DataSources, String> {
    let env = |k: &str| std::env::var_os(k).map(PathBuf::from);
    if let (Some(d), Some(r)) = (env("DUMA_DREAM_DIR"), env("DUMA_RACE_DIR")) {
        let dream = ["train.json", "dev.json", "test.json"]
            .iter()
            .map(|f| load_dream(&d.join(f)).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let race = load_race(&r).map_err(|e| e.to_string())?;
        return Ok(DataSources {
            dream,
            race,
            origin: "real downloads",
            _scratch: None,
        });
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dream_path = dir.path().join("dream.json");
    write_dream(&dream_path, DREAM_DIALOGUES, DREAM_QUESTIONS, 1);
    write_race(&dir.path().join("race"), RACE_PASSAGES, RACE_QUESTIONS, 2);
    Ok(DataSources {
        dream: vec![load_dream(&dream_path).map_err(|e| e.to_string())?],
        race: load_race(&dir.path().join("race")).map_err(|e| e.to_string())?,
        origin: "generated fixtures",
        _scratch: Some(dir),
    })
}

fn data_layer() -> Outcome {
    let src = data_sources()?;
    let dialogues: usize = src.dream.iter().map(|c| c.contexts).sum();
    let dream_q: usize = src.dream.iter().map(|c| c.examples.len()).sum();
    ensure!(dialogues > 6_000, "{dialogues} dialogues");
    ensure!(dream_q > 10_000, "{dream_q} DREAM questions");
    ensure!(src.dream.iter().flat_map(|c| &c.examples).all(|e| e.options.len() == 3), "DREAM question without 3 options");
    let (passages, race_q) = (src.race.contexts, src.race.examples.len());
    ensure!(passages > 28_000, "{passages} passages");
    ensure!((90_000..=110_000).contains(&race_q), "{race_q} RACE questions");
    ensure!(src.race.examples.iter().all(|e| e.options.len() == 4), "RACE question without 4 options");
    for (name, corpus, n) in [("DREAM", &src.dream[0], 3usize), ("RACE", &src.race, 4)] {
        let golds = dataset_stats(corpus).gold_counts;
        ensure!(golds.keys().copied().eq(0..n), "{name} gold indices {golds:?}");
    }
    let mut sampler = ProportionalSampler::new(&[dream_q, race_q], 24, 5).map_err(|e| e.to_string())?;
    let draws = 10_000;
    let dream_share = (0..draws).filter(|_| sampler.next_batch().task == 0).count() as f64 / draws as f64;
    let expected = dream_q as f64 / (dream_q + race_q) as f64;
    ensure!((dream_share - expected).abs() <= FRACTION_TOL, "DREAM batch share {dream_share:.4} vs {expected:.4}");

    // wrong counts are rejected
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bad_dream = dir.path().join("bad.json");
    std::fs::write(&bad_dream, r#"[[["M: hi"],[{"question":"q","choice":["a","b","c","d"],"answer":"a"}],"x"]]"#).unwrap();
    ensure!(load_dream(&bad_dream).is_err(), "4-option DREAM question accepted");
    std::fs::write(
        dir.path().join("bad.txt"),
        r#"{"article":"p","questions":["q"],"options":[["a","b","c"]],"answers":["A"],"id":"1"}"#,
    )
    .unwrap();
    ensure!(load_race(dir.path()).is_err(), "3-option RACE question accepted");
    Ok(format!(
        "{}: DREAM {dialogues} dialogues / {dream_q} questions (3 options), RACE {passages} passages / {race_q} questions (4 options), DREAM batch share {dream_share:.3} (expected {expected:.3})",
        src.origin
    ))
}

fn synthetic(options: usize, size: usize, seed: u64, prefix: &str) -> DataSource {
    DataSource::Synthetic(SyntheticSpec::new(options, size, seed).with_prefix(prefix))
}

fn reproducibility() -> Outcome {
    let mut config = RunConfig {
        model: ModelConfig {
            vocab_size: 200,
            ..ModelConfig::micro()
        },
        train: toy_train_config(6, 3, 3e-3, 7),
    };
    config.train.tasks = vec![
        TaskSpec {
            name: "dream".into(),
            train: synthetic(3, 30, 1, "a"),
            dev: synthetic(3, 12, 2, "a"),
        },
        TaskSpec {
            name: "race".into(),
            train: synthetic(4, 30, 3, "b"),
            dev: synthetic(4, 12, 4, "b"),
        },
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |cfg: RunConfig, out: &Path| -> Result<Vec<u8>, String> {
        let prepared = prepare(cfg).map_err(|e| e.to_string())?;
        run_training(prepared, out).map_err(|e| e.to_string())?;
        std::fs::read(out.join("metrics.jsonl")).map_err(|e| e.to_string())
    };
    let a = run(config.clone(), &dir.path().join("a"))?;
    let b = run(config, &dir.path().join("b"))?;
    ensure!(a == b, "same seed produced different metrics logs");
    let manifest = RunManifest::load(&dir.path().join("a/manifest.json")).map_err(|e| e.to_string())?;
    let c = run(manifest.config, &dir.path().join("c"))?;
    ensure!(a == c, "manifest re-run produced a different metrics log");

    let ckpt = Checkpoint::load(&dir.path().join("a/best.ckpt")).map_err(|e| e.to_string())?;
    let vocab = duma::text::Vocab::load(&dir.path().join("a/vocab.txt")).map_err(|e| e.to_string())?;
    let dev = synthetic_task(&SyntheticSpec::new(3, 12, 2).with_prefix("a"));
    let dev = encode_dataset(&dev, &vocab, ckpt.model.config.max_len).unwrap();
    let reloaded = evaluate(&ckpt.model, &dev).unwrap().accuracy;
    ensure!(Some(reloaded) == ckpt.dev_accuracy, "checkpoint says {:?}, reload gives {reloaded}", ckpt.dev_accuracy);
    let again = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    ensure!(again == ckpt, "byte round trip changed the checkpoint");
    Ok(format!(
        "3 runs byte-identical ({} bytes of metrics); checkpoint dev accuracy {reloaded} preserved",
        a.len()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("architectural invariants", architectural_invariants),
        ("oracle equivalence", oracle_equivalence),
        ("optimization recipe", optimization_recipe),
        ("multi-task mechanics", multitask_mechanics),
        ("overfit sanity", overfit_sanity),
        ("data layer", data_layer),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
