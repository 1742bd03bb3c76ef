use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{McExample, TaskKind};

/// Generator settings for a linearly separable toy task.
///
/// Every option is a single word. The gold option is drawn from a
/// "positive" word pool, distractors from a "negative" pool; the context
/// is filler. Gold positions cycle through the option indices so every
/// position is equally frequent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub options: usize,
    pub size: usize,
    pub seed: u64,
    /// Word-name prefix; tasks with different prefixes share no answer words.
    #[serde(default = "default_prefix")]
    pub prefix: String,
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_context_len")]
    pub context_len: usize,
}

fn default_prefix() -> String {
    "s".into()
}

fn default_pool() -> usize {
    6
}

fn default_context_len() -> usize {
    5
}

impl SyntheticSpec {
    pub fn new(options: usize, size: usize, seed: u64) -> Self {
        Self {
            options,
            size,
            seed,
            prefix: default_prefix(),
            pool: default_pool(),
            context_len: default_context_len(),
        }
    }

    pub fn with_prefix(mut self, prefix: &str) -> Self {
        self.prefix = prefix.into();
        self
    }
}

pub fn synthetic_task(spec: &SyntheticSpec) -> Vec<McExample> {
    assert!(spec.options >= 2 && spec.pool >= spec.options, "pool too small for option count");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let positive: Vec<String> = (0..spec.pool).map(|i| format!("{}yes{i}", spec.prefix)).collect();
    let negative: Vec<String> = (0..spec.pool).map(|i| format!("{}no{i}", spec.prefix)).collect();
    let filler: Vec<String> = (0..2 * spec.pool).map(|i| format!("w{i}")).collect();
    (0..spec.size)
        .map(|i| {
            let gold = i % spec.options;
            let mut distractors: Vec<&String> = negative.choose_multiple(&mut rng, spec.options - 1).collect();
            distractors.shuffle(&mut rng);
            let mut options: Vec<String> = distractors.into_iter().cloned().collect();
            options.insert(gold, positive[rng.random_range(0..positive.len())].clone());
            let context = (0..spec.context_len)
                .map(|_| filler[rng.random_range(0..filler.len())].clone())
                .collect::<Vec<_>>()
                .join(" ");
            McExample {
                task: TaskKind::Synthetic,
                context: vec![context],
                question: "which one ?".into(),
                options,
                gold,
                id: format!("{}-{i}", spec.prefix),
            }
        })
        .collect()
}
