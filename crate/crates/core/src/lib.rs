//! Multiple-choice reading comprehension with dual multi-head co-attention.
//!
//! The pipeline encodes every `(context, question, option)` triple into a
//! single separated sequence, runs it through a small transformer
//! [`encoder`], splits the hidden states at the context boundary and lets
//! both halves attend to each other ([`duma`]), then scores options with a
//! shared linear [`classifier`]. The [`trainer`] samples single-task
//! mini-batches in proportion to dataset sizes and optimizes with
//! decoupled-decay Adam under a linear warmup/decay schedule.
//!
//! Everything runs on the crate's own reverse-mode autodiff in [`tensor`].

mod attention;
pub mod classifier;
pub mod config;
pub mod duma;
pub mod encoder;
pub mod model;
pub mod params;
#[cfg(feature = "cli")]
pub mod run;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use classifier::OptionScores;
pub use config::{DataSource, ModelConfig, TaskSpec, TrainConfig};
pub use model::Model;
pub use tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] text::DataError),
    #[error("vocabulary error: token id {id} is outside a vocabulary of {size}")]
    VocabRange { id: usize, size: usize },
    #[error("split error in {example_id}: {message}")]
    Split { example_id: String, message: String },
    #[error("label error: gold index {gold} for {options} options")]
    Label { gold: usize, options: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
