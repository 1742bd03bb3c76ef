//! Deterministic, schema-faithful stand-ins for the DREAM and RACE
//! releases, sized to match the published totals.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const WORDS: &[&str] = &[
    "the", "a", "school", "teacher", "book", "library", "friend", "morning", "train", "station", "city", "river",
    "weather", "market", "doctor", "family", "music", "garden", "dinner", "letter", "ticket", "holiday", "office",
    "reads", "walks", "buys", "likes", "visits", "writes", "finds", "opens", "early", "late", "often", "never",
];

/// Counts in the published releases (train + dev + test).
pub const DREAM_DIALOGUES: usize = 6_444;
pub const DREAM_QUESTIONS: usize = 10_197;
pub const RACE_PASSAGES: usize = 28_100;
pub const RACE_QUESTIONS: usize = 97_687;

fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut s: Vec<&str> = (0..words).map(|_| *WORDS.choose(rng).unwrap()).collect();
    s.push(".");
    s.join(" ")
}

fn spread(total: usize, items: usize, i: usize) -> usize {
    total / items + usize::from(i < total % items)
}

/// One DREAM-format JSON list with `dialogues` entries and `questions`
/// questions spread evenly over them.
pub fn write_dream(path: &Path, dialogues: usize, questions: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<_> = (0..dialogues)
        .map(|i| {
            let turns: Vec<String> = (0..rng.random_range(2..6))
                .map(|t| format!("{}: {}", if t % 2 == 0 { "M" } else { "W" }, sentence(&mut rng, 8)))
                .collect();
            let qs: Vec<_> = (0..spread(questions, dialogues, i))
                .map(|_| {
                    let choice: Vec<String> = (0..3).map(|_| sentence(&mut rng, 3)).collect();
                    let answer = choice[rng.random_range(0..3)].clone();
                    json!({"question": sentence(&mut rng, 5), "choice": choice, "answer": answer})
                })
                .collect();
            json!([turns, qs, format!("gen-{i}")])
        })
        .collect();
    std::fs::write(path, serde_json::to_vec(&entries).unwrap()).unwrap();
}

/// A RACE-style tree `{train,dev,test}/{high,middle}/<n>.txt`.
pub fn write_race(root: &Path, passages: usize, questions: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for split in ["train", "dev", "test"] {
        for level in ["high", "middle"] {
            std::fs::create_dir_all(root.join(split).join(level)).unwrap();
        }
    }
    for i in 0..passages {
        let split = match i % 20 {
            0 => "dev",
            1 => "test",
            _ => "train",
        };
        let level = if i % 3 == 0 { "middle" } else { "high" };
        let n = spread(questions, passages, i);
        let doc = json!({
            "article": sentence(&mut rng, 30),
            "questions": (0..n).map(|_| sentence(&mut rng, 5)).collect::<Vec<_>>(),
            "options": (0..n).map(|_| (0..4).map(|_| sentence(&mut rng, 2)).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "answers": (0..n).map(|_| ["A", "B", "C", "D"][rng.random_range(0..4)]).collect::<Vec<_>>(),
            "id": format!("{level}{i}.txt"),
        });
        std::fs::write(root.join(split).join(level).join(format!("{i}.txt")), serde_json::to_vec(&doc).unwrap()).unwrap();
    }
}
