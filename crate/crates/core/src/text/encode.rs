use serde::{Deserialize, Serialize};

use super::{tokenize, DataError, McExample, Result, Vocab, CLS, PAD, SEP};

/// Smallest accepted sequence length.
pub const MIN_MAX_LEN: usize = 16;

/// One option of one question, laid out for the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    /// Position of the `[sep]` closing the context segment.
    pub boundary: usize,
    pub gold: bool,
    pub example_id: String,
}

impl EncodedInstance {
    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }
}

/// All options of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedQuestion {
    pub id: String,
    pub options: Vec<EncodedInstance>,
    pub gold: usize,
}

/// Lengths kept for each segment after applying the truncation policy:
/// context loses its oldest tokens first, then the option loses its tail,
/// then the question.
fn fit(ctx: usize, q: usize, opt: usize, budget: usize) -> (usize, usize, usize) {
    if ctx + q + opt <= budget {
        return (ctx, q, opt);
    }
    if q + opt <= budget {
        return (budget - q - opt, q, opt);
    }
    if q <= budget {
        return (0, q, budget - q);
    }
    (0, budget, 0)
}

/// Encodes each option of `ex` as `[cls] ctx [sep] question [sep] option [sep]`
/// padded to `max_len`.
pub fn encode_example(ex: &McExample, vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedInstance>> {
    if max_len < MIN_MAX_LEN {
        return Err(DataError::Encoding(format!(
            "max_len {max_len} is below the minimum of {MIN_MAX_LEN}"
        )));
    }
    let ids = |text: &str| tokenize(text).iter().map(|t| vocab.id(t)).collect::<Vec<_>>();
    let ctx = ids(&ex.context_text());
    let question = ids(&ex.question);
    let budget = max_len - 4;
    let mut out = Vec::with_capacity(ex.options.len());
    for (oi, option) in ex.options.iter().enumerate() {
        let opt = ids(option);
        let (c, q, o) = fit(ctx.len(), question.len(), opt.len(), budget);
        let mut tokens = Vec::with_capacity(max_len);
        tokens.push(CLS);
        tokens.extend_from_slice(&ctx[ctx.len() - c..]);
        let boundary = tokens.len();
        tokens.push(SEP);
        tokens.extend_from_slice(&question[..q]);
        tokens.push(SEP);
        tokens.extend_from_slice(&opt[..o]);
        tokens.push(SEP);
        let real = tokens.len();
        tokens.resize(max_len, PAD);
        let mut mask = vec![false; max_len];
        mask[..real].fill(true);
        out.push(EncodedInstance {
            token_ids: tokens,
            attention_mask: mask,
            boundary,
            gold: oi == ex.gold,
            example_id: ex.id.clone(),
        });
    }
    Ok(out)
}

pub fn encode_dataset(examples: &[McExample], vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedQuestion>> {
    examples
        .iter()
        .map(|ex| {
            Ok(EncodedQuestion {
                id: ex.id.clone(),
                options: encode_example(ex, vocab, max_len)?,
                gold: ex.gold,
            })
        })
        .collect()
}
