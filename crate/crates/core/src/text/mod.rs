//! Corpus ingestion and sequence encoding.
//!
//! DREAM (dialogues, 3 options) and RACE (passages, 4 options) are read
//! into a common [`McExample`]. A word-level [`Vocab`] maps text to ids and
//! [`encode_example`] lays each option out as
//! `[cls] context [sep] question [sep] option [sep] pad…`.

mod dream;
mod encode;
mod race;
mod stats;
mod synthetic;
mod tokenize;
mod vocab;

pub use dream::load_dream;
pub use encode::{encode_dataset, encode_example, EncodedInstance, EncodedQuestion, MIN_MAX_LEN};
pub use race::load_race;
pub use stats::{dataset_stats, DatasetStats, LengthSummary};
pub use synthetic::{synthetic_task, SyntheticSpec};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, Vocab, CLS, PAD, SEP, UNK};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("data integrity error in {id}: {message}")]
    Integrity { id: String, message: String },
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Dream,
    Race,
    Synthetic,
}

impl TaskKind {
    /// Option count every example of this task must carry, if fixed.
    pub fn option_count(self) -> Option<usize> {
        match self {
            TaskKind::Dream => Some(3),
            TaskKind::Race => Some(4),
            TaskKind::Synthetic => None,
        }
    }
}

/// One multiple-choice question with its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McExample {
    pub task: TaskKind,
    /// Dialogue turns for DREAM, a single passage for RACE.
    pub context: Vec<String>,
    pub question: String,
    pub options: Vec<String>,
    pub gold: usize,
    pub id: String,
}

impl McExample {
    pub fn validate(&self) -> Result<()> {
        let integrity = |message: String| DataError::Integrity {
            id: self.id.clone(),
            message,
        };
        if let Some(n) = self.task.option_count() {
            if self.options.len() != n {
                return Err(integrity(format!(
                    "{:?} questions carry {n} options, found {}",
                    self.task,
                    self.options.len()
                )));
            }
        }
        if self.options.len() < 2 {
            return Err(integrity(format!("need at least 2 options, found {}", self.options.len())));
        }
        if self.gold >= self.options.len() {
            return Err(integrity(format!(
                "gold index {} out of range for {} options",
                self.gold,
                self.options.len()
            )));
        }
        Ok(())
    }

    /// Context units joined by single spaces.
    pub fn context_text(&self) -> String {
        self.context.join(" ")
    }
}

/// Examples loaded from one split plus bookkeeping from the loader.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub examples: Vec<McExample>,
    /// Number of dialogues or passages read.
    pub contexts: usize,
    pub warnings: Vec<String>,
}

/// Byte offset of a 1-based line/column pair.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    bytes.len()
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &std::path::Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })
}

fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
