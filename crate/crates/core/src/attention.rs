use crate::tensor::{Result, Scalar, Tape, Var};

pub(crate) struct Attended {
    /// `[Lq × heads·head_dim]`, rows of masked queries zeroed.
    pub output: Var,
    /// Per-head `[Lq × Lk]` attention probabilities.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention over pre-projected queries, keys and values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    head_dim: usize,
    key_mask: &[bool],
    query_keep: &[bool],
) -> Result<Attended> {
    let scale = T::from_f64_lossy(1.0 / (head_dim as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.masked_softmax(scores, key_mask)?;
        outs.push(tape.matmul(probs, vh)?);
        weights.push(probs);
    }
    let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let output = if query_keep.iter().all(|&m| m) {
        joined
    } else {
        tape.mask_rows(joined, query_keep)?
    };
    Ok(Attended { output, weights })
}
