use std::collections::BTreeMap;

use serde::Serialize;

use super::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthSummary {
    pub mean: f64,
    pub p50: usize,
    pub p90: usize,
    pub p99: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub contexts: usize,
    pub questions: usize,
    /// option count → number of questions
    pub option_counts: BTreeMap<usize, usize>,
    /// gold index → number of questions
    pub gold_counts: BTreeMap<usize, usize>,
    /// whitespace words per distinct context
    pub context_words: Option<LengthSummary>,
}

fn percentile(sorted: &[usize], q: f64) -> usize {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn dataset_stats(corpus: &Corpus) -> DatasetStats {
    let mut option_counts = BTreeMap::new();
    let mut gold_counts = BTreeMap::new();
    let mut lengths = Vec::new();
    let mut last_context: Option<&Vec<String>> = None;
    for ex in &corpus.examples {
        *option_counts.entry(ex.options.len()).or_default() += 1;
        *gold_counts.entry(ex.gold).or_default() += 1;
        // questions sharing a context are stored consecutively
        if last_context != Some(&ex.context) {
            lengths.push(ex.context.iter().map(|t| t.split_whitespace().count()).sum::<usize>());
            last_context = Some(&ex.context);
        }
    }
    lengths.sort_unstable();
    let context_words = (!lengths.is_empty()).then(|| LengthSummary {
        mean: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
        p50: percentile(&lengths, 0.5),
        p90: percentile(&lengths, 0.9),
        p99: percentile(&lengths, 0.99),
        max: *lengths.last().expect("non-empty"),
    });
    DatasetStats {
        contexts: corpus.contexts,
        questions: corpus.examples.len(),
        option_counts,
        gold_counts,
        context_words,
    }
}
