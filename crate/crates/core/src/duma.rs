//! Dual multi-head co-attention between the context and question-answer
//! halves of an encoded sequence.
//!
//! The encoder output is split at the first separator. The context half
//! attends to the question-answer half and vice versa; each attended
//! sequence is output-projected, mean-pooled under its own mask, and the
//! two pooled vectors are concatenated into a `2d` representation.

use rand::Rng;

use crate::attention::attend;
use crate::config::ModelConfig;
use crate::params::{xavier_uniform, Bound, ParamId, ParamSet};
use crate::tensor::{Scalar, Tape, Var};
use crate::text::EncodedInstance;
use crate::{Error, Result};

/// Projection ids for one attention direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl DirectionParams {
    fn init<R: Rng>(store: &mut ParamSet<f32>, rng: &mut R, name: &str, cfg: &ModelConfig) -> Self {
        let (d, inner) = (cfg.hidden, cfg.duma_heads * cfg.duma_head_dim);
        let mut mat = |n: &str, r, c| store.add(format!("{name}.{n}"), xavier_uniform(rng, r, c), true);
        Self {
            wq: mat("wq", d, inner),
            wk: mat("wk", d, inner),
            wv: mat("wv", d, inner),
            wo: mat("wo", inner, d),
        }
    }

    pub fn bind(&self, bound: &Bound) -> DirectionVars {
        DirectionVars {
            wq: bound[self.wq],
            wk: bound[self.wk],
            wv: bound[self.wv],
            wo: bound[self.wo],
        }
    }
}

/// Tape handles of one direction's projections.
#[derive(Debug, Clone, Copy)]
pub struct DirectionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumaLayerParams {
    /// Context queries over question-answer keys.
    pub context_side: DirectionParams,
    /// Question-answer queries over context keys.
    pub qa_side: DirectionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumaParams {
    pub layers: Vec<DumaLayerParams>,
    pub heads: usize,
    pub head_dim: usize,
}

impl DumaParams {
    pub fn init<R: Rng>(store: &mut ParamSet<f32>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.duma_layers)
            .map(|i| {
                let context_side = DirectionParams::init(store, rng, &format!("duma.layer{i}.context_side"), cfg);
                let qa_side = if cfg.share_directions {
                    context_side
                } else {
                    DirectionParams::init(store, rng, &format!("duma.layer{i}.qa_side"), cfg)
                };
                DumaLayerParams { context_side, qa_side }
            })
            .collect();
        Self {
            layers,
            heads: cfg.duma_heads,
            head_dim: cfg.duma_head_dim,
        }
    }
}

/// The two halves of an encoder output.
#[derive(Debug, Clone)]
pub struct SplitSequence {
    pub context: Var,
    pub context_mask: Vec<bool>,
    pub qa: Var,
    pub qa_mask: Vec<bool>,
}

/// Context = rows `1..boundary`, question-answer = rows
/// `boundary+1..real_len` (trailing separators included). `[cls]`, the
/// boundary separator and padding are dropped.
pub fn split_sequence<T: Scalar>(tape: &mut Tape<T>, hidden: Var, inst: &EncodedInstance) -> Result<SplitSequence> {
    let real = inst.real_len();
    let split_err = |message: String| Error::Split {
        example_id: inst.example_id.clone(),
        message,
    };
    if inst.boundary < 2 {
        return Err(split_err(format!("boundary {} leaves the context side empty", inst.boundary)));
    }
    if inst.boundary + 1 >= real {
        return Err(split_err(format!(
            "boundary {} leaves the question-answer side empty (real length {real})",
            inst.boundary
        )));
    }
    let ctx_len = inst.boundary - 1;
    let qa_len = real - inst.boundary - 1;
    let context = tape.slice_rows(hidden, 1, ctx_len)?;
    let qa = tape.slice_rows(hidden, inst.boundary + 1, qa_len)?;
    Ok(SplitSequence {
        context,
        context_mask: inst.attention_mask[1..inst.boundary].to_vec(),
        qa,
        qa_mask: inst.attention_mask[inst.boundary + 1..real].to_vec(),
    })
}

/// Multi-head attention with queries from one sequence and keys/values
/// from another, projected back to the model width. Returns
/// `[Lq×d]` and the per-head attention weights.
#[allow(clippy::too_many_arguments)]
pub fn coattend_with_weights<T: Scalar>(
    tape: &mut Tape<T>,
    queries: Var,
    query_mask: &[bool],
    keys_values: Var,
    key_mask: &[bool],
    proj: &DirectionVars,
    heads: usize,
    head_dim: usize,
) -> Result<(Var, Vec<Var>)> {
    let q = tape.matmul(queries, proj.wq)?;
    let k = tape.matmul(keys_values, proj.wk)?;
    let v = tape.matmul(keys_values, proj.wv)?;
    let attended = attend(tape, q, k, v, heads, head_dim, key_mask, query_mask)?;
    let out = tape.matmul(attended.output, proj.wo)?;
    Ok((out, attended.weights))
}

#[allow(clippy::too_many_arguments)]
pub fn coattend<T: Scalar>(
    tape: &mut Tape<T>,
    queries: Var,
    query_mask: &[bool],
    keys_values: Var,
    key_mask: &[bool],
    proj: &DirectionVars,
    heads: usize,
    head_dim: usize,
) -> Result<Var> {
    coattend_with_weights(tape, queries, query_mask, keys_values, key_mask, proj, heads, head_dim).map(|(o, _)| o)
}

/// Attention weights from the last co-attention layer, for inspection.
#[derive(Debug, Clone)]
pub struct DumaTrace {
    pub context_to_qa: Vec<Var>,
    pub qa_to_context: Vec<Var>,
}

impl DumaParams {
    /// Fused `[2d]` representation of one encoded option.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, hidden: Var, inst: &EncodedInstance) -> Result<Var> {
        self.forward_traced(tape, bound, hidden, inst).map(|(v, _)| v)
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        hidden: Var,
        inst: &EncodedInstance,
    ) -> Result<(Var, DumaTrace)> {
        let split = split_sequence(tape, hidden, inst)?;
        let (mut ctx, mut qa) = (split.context, split.qa);
        let mut trace = DumaTrace {
            context_to_qa: Vec::new(),
            qa_to_context: Vec::new(),
        };
        for layer in &self.layers {
            let cp = layer.context_side.bind(bound);
            let qp = layer.qa_side.bind(bound);
            let (next_ctx, cw) =
                coattend_with_weights(tape, ctx, &split.context_mask, qa, &split.qa_mask, &cp, self.heads, self.head_dim)?;
            let (next_qa, qw) =
                coattend_with_weights(tape, qa, &split.qa_mask, ctx, &split.context_mask, &qp, self.heads, self.head_dim)?;
            ctx = next_ctx;
            qa = next_qa;
            trace = DumaTrace {
                context_to_qa: cw,
                qa_to_context: qw,
            };
        }
        let pooled_ctx = tape.mean_pool(ctx, &split.context_mask)?;
        let pooled_qa = tape.mean_pool(qa, &split.qa_mask)?;
        Ok((tape.concat(&[pooled_ctx, pooled_qa])?, trace))
    }
}
