use std::path::Path;

use serde::Deserialize;
use walkdir::WalkDir;

use super::{parse_json, read_file, Corpus, DataError, McExample, Result, TaskKind};

#[derive(Deserialize)]
struct RaceFile {
    article: String,
    questions: Vec<String>,
    options: Vec<Vec<String>>,
    answers: Vec<String>,
    id: String,
}

/// Reads every RACE file below `root` (recursively, sorted by path).
///
/// Files ending in `.json` or `.txt` are parsed; the public release ships
/// its JSON documents with a `.txt` extension.
pub fn load_race(root: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| DataError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        match entry.path().extension().and_then(|e| e.to_str()) {
            Some("json") | Some("txt") => files.push(entry.into_path()),
            _ => {}
        }
    }
    if files.is_empty() {
        corpus.warnings.push(format!("no RACE files found under {}", root.display()));
        return Ok(corpus);
    }
    for path in files {
        let bytes = read_file(&path)?;
        let file: RaceFile = parse_json(&path, &bytes)?;
        corpus.contexts += 1;
        append_file(&path, file, &mut corpus.examples)?;
    }
    Ok(corpus)
}

fn append_file(path: &Path, file: RaceFile, out: &mut Vec<McExample>) -> Result<()> {
    let n = file.questions.len();
    let where_ = |qi: usize| format!("{} question {qi}", path.display());
    if file.options.len() != n || file.answers.len() != n {
        return Err(DataError::Integrity {
            id: path.display().to_string(),
            message: format!(
                "{n} questions but {} option rows and {} answers",
                file.options.len(),
                file.answers.len()
            ),
        });
    }
    for (qi, ((question, options), answer)) in file.questions.into_iter().zip(file.options).zip(&file.answers).enumerate() {
        if options.len() != 4 {
            return Err(DataError::Integrity {
                id: where_(qi),
                message: format!("expected 4 options, found {}", options.len()),
            });
        }
        let gold = match answer.as_str() {
            "A" => 0,
            "B" => 1,
            "C" => 2,
            "D" => 3,
            other => {
                return Err(DataError::Integrity {
                    id: where_(qi),
                    message: format!("answer {other:?} outside A-D"),
                })
            }
        };
        out.push(McExample {
            task: TaskKind::Race,
            context: vec![file.article.clone()],
            question,
            options,
            gold,
            id: format!("{}#{qi}", file.id),
        });
    }
    Ok(())
}
