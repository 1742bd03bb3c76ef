use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A single-task mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub task: usize,
    pub indices: Vec<usize>,
}

/// Picks a task with probability proportional to its size, then draws that
/// task's examples without replacement from a shuffled pool, reshuffling
/// once the pool is spent.
#[derive(Debug, Clone)]
pub struct ProportionalSampler {
    sizes: Vec<usize>,
    total: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    pools: Vec<Vec<usize>>,
}

impl ProportionalSampler {
    pub fn new(sizes: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("sampler needs at least one task".into()));
        }
        if let Some(t) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("task {t} has no training examples")));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            total: sizes.iter().sum(),
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pools: vec![Vec::new(); sizes.len()],
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.sizes.iter().map(|&s| s as f64 / self.total as f64).collect()
    }

    pub fn next_batch(&mut self) -> Batch {
        let mut draw = self.rng.random_range(0..self.total);
        let mut task = 0;
        while draw >= self.sizes[task] {
            draw -= self.sizes[task];
            task += 1;
        }
        let mut indices = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            if self.pools[task].is_empty() {
                let mut fresh: Vec<usize> = (0..self.sizes[task]).collect();
                fresh.shuffle(&mut self.rng);
                self.pools[task] = fresh;
            }
            indices.push(self.pools[task].pop().expect("refilled"));
        }
        Batch { task, indices }
    }
}

impl Iterator for ProportionalSampler {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}
