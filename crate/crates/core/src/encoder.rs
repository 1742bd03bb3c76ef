//! Transformer encoder stack standing in for the pretrained Albert encoder.
//!
//! Pre-norm blocks: `x + attn(ln(x))`, then `x + ffn(ln(x))`, with a final
//! layer norm. Padded keys get zero attention weight and padded query rows
//! produce zero attention output, so real rows never see padding.

use rand::Rng;

pub use crate::config::ModelConfig;
use crate::attention::attend;
use crate::params::{xavier_uniform, Bound, ParamId, ParamSet};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::text::EncodedInstance;
use crate::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn init(store: &mut ParamSet<f32>, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(vec![width]), false),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![width]), false),
        }
    }

    pub(crate) fn apply<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        Ok(tape.layer_norm(x, bound[self.gain], bound[self.bias], LAYER_NORM_EPS)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attn_norm: LayerNormParams,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ff_norm: LayerNormParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl BlockParams {
    fn init<R: Rng>(store: &mut ParamSet<f32>, rng: &mut R, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.hidden;
        let mut mat = |store: &mut ParamSet<f32>, n: &str, r, c| store.add(format!("{name}.{n}"), xavier_uniform(rng, r, c), true);
        let attn_norm = LayerNormParams::init(store, &format!("{name}.attn_norm"), d);
        let wq = mat(store, "wq", d, d);
        let wk = mat(store, "wk", d, d);
        let wv = mat(store, "wv", d, d);
        let wo = mat(store, "wo", d, d);
        let ff_norm = LayerNormParams::init(store, &format!("{name}.ff_norm"), d);
        let w1 = mat(store, "w1", d, cfg.ff_width);
        let w2 = mat(store, "w2", cfg.ff_width, d);
        let mut bias = |n: &str, w| store.add(format!("{name}.{n}"), Tensor::zeros(vec![w]), false);
        Self {
            attn_norm,
            wq,
            bq: bias("bq", d),
            wk,
            wv,
            bv: bias("bv", d),
            wo,
            bo: bias("bo", d),
            ff_norm,
            w1,
            b1: bias("b1", cfg.ff_width),
            w2,
            b2: bias("b2", d),
        }
    }
}

/// Parameter layout of the encoder. With layer sharing on, `blocks` holds
/// a single block that every depth reuses.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub blocks: Vec<BlockParams>,
    pub final_norm: LayerNormParams,
}

/// Inverted-dropout state for one forward pass.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    seed: u64,
    calls: u64,
}

impl Dropout {
    pub fn off() -> Self {
        Self {
            rate: 0.0,
            seed: 0,
            calls: 0,
        }
    }

    pub fn new(rate: f64, seed: u64) -> Self {
        Self { rate, seed, calls: 0 }
    }

    pub(crate) fn apply<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        self.calls += 1;
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.calls);
        Ok(tape.dropout(x, self.rate, seed)?)
    }
}

impl EncoderParams {
    pub fn init<R: Rng>(store: &mut ParamSet<f32>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let token_embedding = store.add("encoder.token_embedding", xavier_uniform(rng, cfg.vocab_size, cfg.hidden), true);
        let position_embedding = store.add("encoder.position_embedding", xavier_uniform(rng, cfg.max_len, cfg.hidden), true);
        let distinct = if cfg.share_layers { 1 } else { cfg.encoder_layers };
        let blocks = (0..distinct)
            .map(|i| BlockParams::init(store, rng, &format!("encoder.block{i}"), cfg))
            .collect();
        let final_norm = LayerNormParams::init(store, "encoder.final_norm", cfg.hidden);
        Self {
            token_embedding,
            position_embedding,
            blocks,
            final_norm,
        }
    }

    pub fn block_at_depth(&self, depth: usize) -> &BlockParams {
        &self.blocks[depth % self.blocks.len()]
    }

    /// Contextualised hidden states `[L×d]` for one instance.
    pub fn forward<T: Scalar>(
        &self,
        cfg: &ModelConfig,
        tape: &mut Tape<T>,
        bound: &Bound,
        inst: &EncodedInstance,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let len = inst.token_ids.len();
        if len == 0 || len > cfg.max_len || inst.attention_mask.len() != len {
            return Err(Error::Config(format!(
                "instance {} has length {len}, model accepts 1..={}",
                inst.example_id, cfg.max_len
            )));
        }
        if let Some(&id) = inst.token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::VocabRange {
                id,
                size: cfg.vocab_size,
            });
        }
        let mask = &inst.attention_mask;
        let tokens = tape.gather_rows(bound[self.token_embedding], &inst.token_ids)?;
        let positions = tape.slice_rows(bound[self.position_embedding], 0, len)?;
        let mut x = tape.add(tokens, positions)?;
        x = dropout.apply(tape, x)?;
        let heads = cfg.encoder_heads;
        let head_dim = cfg.encoder_head_dim();
        for depth in 0..cfg.encoder_layers {
            let b = self.block_at_depth(depth);
            let h = b.attn_norm.apply(tape, bound, x)?;
            let linear = |tape: &mut Tape<T>, w: ParamId, bias: ParamId| -> Result<Var> {
                let y = tape.matmul(h, bound[w])?;
                Ok(tape.add_row(y, bound[bias])?)
            };
            let q = linear(tape, b.wq, b.bq)?;
            // no key bias: a shared shift of every key cancels in the softmax
            let k = tape.matmul(h, bound[b.wk])?;
            let v = linear(tape, b.wv, b.bv)?;
            let attended = attend(tape, q, k, v, heads, head_dim, mask, mask)?.output;
            let a = tape.matmul(attended, bound[b.wo])?;
            let a = tape.add_row(a, bound[b.bo])?;
            let a = tape.mask_rows(a, mask)?;
            let a = dropout.apply(tape, a)?;
            x = tape.add(x, a)?;

            let h = b.ff_norm.apply(tape, bound, x)?;
            let f = tape.matmul(h, bound[b.w1])?;
            let f = tape.add_row(f, bound[b.b1])?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, bound[b.w2])?;
            let f = tape.add_row(f, bound[b.b2])?;
            let f = dropout.apply(tape, f)?;
            x = tape.add(x, f)?;
            if !tape.value(x).all_finite() {
                return Err(Error::Numeric(format!("non-finite activation after encoder layer {depth}")));
            }
        }
        self.final_norm.apply(tape, bound, x)
    }
}
