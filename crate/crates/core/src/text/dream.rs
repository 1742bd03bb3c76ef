use std::path::Path;

use serde::Deserialize;

use super::{parse_json, read_file, Corpus, DataError, McExample, Result, TaskKind};

#[derive(Deserialize)]
struct DreamQuestion {
    question: String,
    choice: Vec<String>,
    answer: String,
}

#[derive(Deserialize)]
struct DreamEntry(Vec<String>, Vec<DreamQuestion>, String);

/// Reads one DREAM split: a JSON list of `[turns, questions, id]` entries.
pub fn load_dream(path: &Path) -> Result<Corpus> {
    let bytes = read_file(path)?;
    let entries: Vec<DreamEntry> = parse_json(path, &bytes)?;
    let mut corpus = Corpus {
        contexts: entries.len(),
        ..Corpus::default()
    };
    for DreamEntry(turns, questions, id) in entries {
        for (qi, q) in questions.into_iter().enumerate() {
            let ex_id = format!("{id}#{qi}");
            let gold = q.choice.iter().position(|c| *c == q.answer).ok_or_else(|| DataError::Integrity {
                id: ex_id.clone(),
                message: format!("answer {:?} is not among the choices", q.answer),
            })?;
            let ex = McExample {
                task: TaskKind::Dream,
                context: turns.clone(),
                question: q.question,
                options: q.choice,
                gold,
                id: ex_id,
            };
            ex.validate()?;
            corpus.examples.push(ex);
        }
    }
    Ok(corpus)
}
