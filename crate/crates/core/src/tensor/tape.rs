use std::sync::atomic::{AtomicU32, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{matmul_raw, transpose_raw, Result, Scalar, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    id: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    Transpose(usize),
    MaskedSoftmax(usize),
    MaskRows(usize, Vec<bool>),
    LayerNorm {
        input: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(usize),
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    SliceRows {
        input: usize,
        start: usize,
    },
    SliceCols {
        input: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    MeanPool {
        input: usize,
        mask: Vec<bool>,
        count: usize,
    },
    Sum(usize),
    CrossEntropy {
        logits: usize,
        gold: usize,
        probs: Vec<T>,
    },
    Dropout {
        input: usize,
        scale: Vec<T>,
    },
    Reshape(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`, or `None` when the loss does not depend on it or
    /// it was recorded as a constant.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

fn shape_of<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    t.shape().to_vec()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

const GELU_COEF: f64 = 0.044_715;

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(GELU_COEF);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x);
    (y, dy)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded operation. Handles issued before the call
    /// become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(TensorError::Graph(format!(
                "variable {} does not belong to this tape",
                v.id
            )));
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    /// Records a trainable leaf; it will receive a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let id = self.check(v).expect("variable from another tape");
        &self.nodes[id].value
    }

    fn val(&self, id: usize) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.val(ia).dims2("matmul")?;
        let (k2, n) = self.val(ib).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::Dimension {
                op: "matmul",
                left: shape_of(self.val(ia)),
                right: shape_of(self.val(ib)),
            });
        }
        let data = matmul_raw(self.val(ia).data(), self.val(ib).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::MatMul(ia, ib), &[ia, ib]))
    }

    fn same_shape(&self, op: &'static str, ia: usize, ib: usize) -> Result<()> {
        if self.val(ia).shape() != self.val(ib).shape() {
            return Err(TensorError::Dimension {
                op,
                left: shape_of(self.val(ia)),
                right: shape_of(self.val(ib)),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, usize, usize)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape(op, ia, ib)?;
        let (x, y) = (self.val(ia), self.val(ib));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok((Tensor::new(shape_of(x), data)?, ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.zip_with("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(ia, ib), &[ia, ib]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.zip_with("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(ia, ib), &[ia, ib]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, ia, ib) = self.zip_with("mul", a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(ia, ib), &[ia, ib]))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (ix, ir) = (self.check(x)?, self.check(row)?);
        let (m, n) = self.val(ix).dims2("add_row")?;
        if self.val(ir).len() != n {
            return Err(TensorError::Dimension {
                op: "add_row",
                left: shape_of(self.val(ix)),
                right: shape_of(self.val(ir)),
            });
        }
        let r = self.val(ir).data();
        let data = self
            .val(ix)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r[i % n])
            .collect();
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::AddRow(ix, ir), &[ix, ir]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(|v| v * c);
        Ok(self.push(out, Op::Scale(ix, c), &[ix]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.val(ix).dims2("transpose")?;
        let out = Tensor::new(vec![c, r], transpose_raw(self.val(ix).data(), r, c))?;
        Ok(self.push(out, Op::Transpose(ix), &[ix]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ix), &[ix]))
    }

    /// Softmax along the last axis restricted to positions where `mask` is
    /// true. `mask` is either one row (broadcast to every row) or one entry
    /// per element. Masked positions come out as exactly zero; a row with
    /// no unmasked entry is an error.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let ix = self.check(logits)?;
        let x = self.val(ix);
        let width = *x.shape().last().expect("rank >= 1");
        let rows = x.len() / width;
        if mask.len() != width && mask.len() != x.len() {
            return Err(TensorError::Dimension {
                op: "masked_softmax",
                left: shape_of(x),
                right: vec![mask.len()],
            });
        }
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x.data()[r * width..(r + 1) * width];
            let rmask = if mask.len() == width {
                mask
            } else {
                &mask[r * width..(r + 1) * width]
            };
            let max = row
                .iter()
                .zip(rmask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or(TensorError::DegenerateRow { row: r })?;
            let orow = &mut out[r * width..(r + 1) * width];
            let mut total = T::zero();
            for ((o, &v), &m) in orow.iter_mut().zip(row).zip(rmask) {
                if m {
                    *o = (v - max).exp();
                    total = total + *o;
                }
            }
            for o in orow.iter_mut() {
                *o = *o / total;
            }
        }
        let out = Tensor::new(shape_of(x), out)?;
        Ok(self.push(out, Op::MaskedSoftmax(ix), &[ix]))
    }

    /// Zeroes every row of a matrix whose `keep` flag is false.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.val(ix).dims2("mask_rows")?;
        if keep.len() != r {
            return Err(TensorError::Dimension {
                op: "mask_rows",
                left: shape_of(self.val(ix)),
                right: vec![keep.len()],
            });
        }
        let mut data = self.val(ix).data().to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                data[i * c..(i + 1) * c].fill(T::zero());
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        Ok(self.push(out, Op::MaskRows(ix, keep.to_vec()), &[ix]))
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (r, d) = self.val(ix).dims2("layer_norm")?;
        for i in [ig, ib] {
            if self.val(i).len() != d {
                return Err(TensorError::Dimension {
                    op: "layer_norm",
                    left: shape_of(self.val(ix)),
                    right: shape_of(self.val(i)),
                });
            }
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).expect("width");
        let (xs, g, b) = (self.val(ix).data(), self.val(ig).data(), self.val(ib).data());
        let mut xhat = vec![T::zero(); r * d];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * d];
        for i in 0..r {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(vec![r, d], out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                input: ix,
                gain: ig,
                bias: ib,
                xhat,
                inv_std,
            },
            &[ix, ig, ib],
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(|v| gelu_parts(v).0);
        Ok(self.push(out, Op::Gelu(ix), &[ix]))
    }

    /// Looks up rows of a `vocab×d` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let (v, d) = self.val(it).dims2("gather_rows")?;
        if ids.is_empty() {
            return Err(TensorError::Graph("gather_rows: no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    extent: v,
                });
            }
            data.extend_from_slice(&self.val(it).data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table: it,
                ids: ids.to_vec(),
            },
            &[it],
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.val(ix).dims2("slice_rows")?;
        if len == 0 || start + len > r {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                extent: r,
            });
        }
        let data = self.val(ix).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(vec![len, c], data)?;
        Ok(self.push(out, Op::SliceRows { input: ix, start }, &[ix]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.val(ix).dims2("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                extent: c,
            });
        }
        let src = self.val(ix).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols { input: ix, start }, &[ix]))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = *ids.first().ok_or_else(|| TensorError::Graph("concat_cols: no inputs".into()))?;
        let (r, _) = self.val(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(ids.len());
        for &i in &ids {
            let (ri, ci) = self.val(i).dims2("concat_cols")?;
            if ri != r {
                return Err(TensorError::Dimension {
                    op: "concat_cols",
                    left: shape_of(self.val(first)),
                    right: shape_of(self.val(i)),
                });
            }
            widths.push(ci);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for (&i, &w) in ids.iter().zip(&widths) {
                data.extend_from_slice(&self.val(i).data()[row * w..(row + 1) * w]);
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        Ok(self.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Stacks along the leading axis. Rank-1 inputs of equal length become
    /// the rows of a matrix; rank-2 inputs with equal widths are appended.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = *ids.first().ok_or_else(|| TensorError::Graph("concat_rows: no inputs".into()))?;
        let width = *self.val(first).shape().last().expect("rank >= 1");
        let mut rows = 0;
        let mut data = Vec::new();
        for &i in &ids {
            let t = self.val(i);
            if t.rank() > 2 || *t.shape().last().expect("rank >= 1") != width {
                return Err(TensorError::Dimension {
                    op: "concat_rows",
                    left: shape_of(self.val(first)),
                    right: shape_of(t),
                });
            }
            rows += t.len() / width;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, width], data)?;
        Ok(self.push(out, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Joins rank-1 vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(TensorError::Graph("concat: no inputs".into()));
        }
        let mut data = Vec::new();
        for &i in &ids {
            data.extend_from_slice(self.val(i).data());
        }
        let flat: Vec<usize> = ids.clone();
        let out = Tensor::vector(data);
        // Rank-1 concat shares the row-stacking backward rule.
        Ok(self.push(out, Op::ConcatRows(flat), &ids))
    }

    /// Mean over the rows of `seq` selected by `mask`.
    pub fn mean_pool(&mut self, seq: Var, mask: &[bool]) -> Result<Var> {
        let ix = self.check(seq)?;
        let (l, d) = self.val(ix).dims2("mean_pool")?;
        if mask.len() != l {
            return Err(TensorError::Dimension {
                op: "mean_pool",
                left: shape_of(self.val(ix)),
                right: vec![mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::DegeneratePool);
        }
        let mut acc = vec![T::zero(); d];
        let src = self.val(ix).data();
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            add_into(&mut acc, &src[i * d..(i + 1) * d]);
        }
        let cn = T::from_usize(count).expect("count");
        acc.iter_mut().for_each(|v| *v = *v / cn);
        let out = Tensor::vector(acc);
        Ok(self.push(
            out,
            Op::MeanPool {
                input: ix,
                mask: mask.to_vec(),
                count,
            },
            &[ix],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = Tensor::scalar(self.val(ix).sum());
        Ok(self.push(out, Op::Sum(ix), &[ix]))
    }

    /// `-log softmax(logits)[gold]` via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let ix = self.check(logits)?;
        let z = self.val(ix).data();
        if gold >= z.len() {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: gold,
                extent: z.len(),
            });
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let probs = z.iter().map(|&v| (v - lse).exp()).collect();
        let out = Tensor::scalar(lse - z[gold]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits: ix,
                gold,
                probs,
            },
            &[ix],
        ))
    }

    /// Inverted dropout with its own seeded generator. Rate 0 is identity.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        let ix = self.check(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Numeric(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let scale: Vec<T> = (0..self.val(ix).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let src = self.val(ix);
        let data = src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let out = Tensor::new(shape_of(src), data)?;
        Ok(self.push(out, Op::Dropout { input: ix, scale }, &[ix]))
    }

    /// Runs reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.check(loss)?;
        if !self.val(il).is_scalar() {
            return Err(TensorError::Rank {
                op: "backward",
                expected: 0,
                shape: shape_of(self.val(il)),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::new(shape_of(self.val(il)), vec![T::one()])?);

        for idx in (0..=il).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], target: usize, f: impl FnOnce(&mut [T])) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let slot = grads[target].get_or_insert_with(|| Tensor::zeros(shape_of(&self.nodes[target].value)));
        f(slot.data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.val(*a).dims2("matmul").expect("checked");
                let n = self.val(*b).shape()[1];
                if self.nodes[*a].requires_grad {
                    let bt = transpose_raw(self.val(*b).data(), k, n);
                    let da = matmul_raw(gd, &bt, m, n, k);
                    self.acc(grads, *a, |s| add_into(s, &da));
                }
                if self.nodes[*b].requires_grad {
                    let at = transpose_raw(self.val(*a).data(), m, k);
                    let db = matmul_raw(&at, gd, k, m, n);
                    self.acc(grads, *b, |s| add_into(s, &db));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |s| add_into(s, gd));
                self.acc(grads, *b, |s| add_into(s, gd));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |s| add_into(s, gd));
                self.acc(grads, *b, |s| {
                    for (d, &v) in s.iter_mut().zip(gd) {
                        *d = *d - v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                self.acc(grads, *a, |s| {
                    for ((d, &v), &o) in s.iter_mut().zip(gd).zip(bv) {
                        *d = *d + v * o;
                    }
                });
                self.acc(grads, *b, |s| {
                    for ((d, &v), &o) in s.iter_mut().zip(gd).zip(av) {
                        *d = *d + v * o;
                    }
                });
            }
            Op::AddRow(x, r) => {
                self.acc(grads, *x, |s| add_into(s, gd));
                let n = self.val(*r).len();
                self.acc(grads, *r, |s| {
                    for (i, &v) in gd.iter().enumerate() {
                        s[i % n] = s[i % n] + v;
                    }
                });
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, |s| {
                    for (d, &v) in s.iter_mut().zip(gd) {
                        *d = *d + v * *c;
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = self.val(*x).dims2("transpose").expect("checked");
                let gt = transpose_raw(gd, c, r);
                self.acc(grads, *x, |s| add_into(s, &gt));
            }
            Op::Reshape(x) => self.acc(grads, *x, |s| add_into(s, gd)),
            Op::MaskedSoftmax(x) => {
                let y = self.nodes[idx].value.data();
                let width = *self.nodes[idx].value.shape().last().expect("rank >= 1");
                self.acc(grads, *x, |s| {
                    for r in 0..y.len() / width {
                        let span = r * width..(r + 1) * width;
                        let dot: T = y[span.clone()].iter().zip(&gd[span.clone()]).map(|(&p, &q)| p * q).sum();
                        for j in span {
                            s[j] = s[j] + y[j] * (gd[j] - dot);
                        }
                    }
                });
            }
            Op::MaskRows(x, keep) => {
                let c = self.val(*x).shape()[1];
                self.acc(grads, *x, |s| {
                    for (i, &k) in keep.iter().enumerate() {
                        if k {
                            add_into(&mut s[i * c..(i + 1) * c], &gd[i * c..(i + 1) * c]);
                        }
                    }
                });
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.val(*gain).len();
                let r = inv_std.len();
                let gv = self.val(*gain).data();
                self.acc(grads, *gain, |s| {
                    for (i, &v) in gd.iter().enumerate() {
                        s[i % d] = s[i % d] + v * xhat[i];
                    }
                });
                self.acc(grads, *bias, |s| {
                    for (i, &v) in gd.iter().enumerate() {
                        s[i % d] = s[i % d] + v;
                    }
                });
                let dn = T::from_usize(d).expect("width");
                self.acc(grads, *input, |s| {
                    for i in 0..r {
                        let span = i * d..(i + 1) * d;
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in span.clone() {
                            let dh = gd[j] * gv[j - i * d];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * xhat[j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        for j in span {
                            let dh = gd[j] * gv[j - i * d];
                            s[j] = s[j] + inv_std[i] * (dh - mean_dh - xhat[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.val(*x).data();
                self.acc(grads, *x, |s| {
                    for ((d, &v), &xi) in s.iter_mut().zip(gd).zip(xv) {
                        *d = *d + v * gelu_parts(xi).1;
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = self.val(*table).shape()[1];
                self.acc(grads, *table, |s| {
                    for (row, &id) in ids.iter().enumerate() {
                        add_into(&mut s[id * d..(id + 1) * d], &gd[row * d..(row + 1) * d]);
                    }
                });
            }
            Op::SliceRows { input, start } => {
                let c = self.val(*input).shape()[1];
                self.acc(grads, *input, |s| add_into(&mut s[start * c..start * c + gd.len()], gd));
            }
            Op::SliceCols { input, start } => {
                let c = self.val(*input).shape()[1];
                let len = g.shape()[1];
                self.acc(grads, *input, |s| {
                    for (i, chunk) in gd.chunks(len).enumerate() {
                        add_into(&mut s[i * c + start..i * c + start + len], chunk);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).shape()[1];
                    self.acc(grads, p, |s| {
                        for (i, row) in gd.chunks(total).enumerate() {
                            add_into(&mut s[i * w..(i + 1) * w], &row[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.val(p).len();
                    self.acc(grads, p, |s| add_into(s, &gd[offset..offset + n]));
                    offset += n;
                }
            }
            Op::MeanPool { input, mask, count } => {
                let d = gd.len();
                let cn = T::from_usize(*count).expect("count");
                self.acc(grads, *input, |s| {
                    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        for j in 0..d {
                            s[i * d + j] = s[i * d + j] + gd[j] / cn;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let v = gd[0];
                self.acc(grads, *x, |s| s.iter_mut().for_each(|d| *d = *d + v));
            }
            Op::CrossEntropy { logits, gold, probs } => {
                let v = gd[0];
                self.acc(grads, *logits, |s| {
                    for (i, (d, &p)) in s.iter_mut().zip(probs).enumerate() {
                        let target = if i == *gold { T::one() } else { T::zero() };
                        *d = *d + v * (p - target);
                    }
                });
            }
            Op::Dropout { input, scale } => {
                self.acc(grads, *input, |s| {
                    for ((d, &v), &k) in s.iter_mut().zip(gd).zip(scale) {
                        *d = *d + v * k;
                    }
                });
            }
        }
    }
}
