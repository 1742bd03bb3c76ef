use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipOutcome {
    /// Global L2 norm before clipping.
    pub norm: f64,
    /// Factor applied to every gradient (1 when untouched).
    pub scale: f64,
}

impl ClipOutcome {
    pub fn clipped_norm(&self) -> f64 {
        self.norm * self.scale
    }
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`.
pub fn clip_grad_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> Result<ClipOutcome> {
    if max_norm.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Config(format!("clip norm must be positive, got {max_norm}")));
    }
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::Numeric("non-finite gradient before clipping".into()));
    }
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm <= max_norm {
        return Ok(ClipOutcome { norm, scale: 1.0 });
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v = (*v as f64 * scale) as f32;
        }
    }
    Ok(ClipOutcome { norm, scale })
}

/// Adam first and second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn zeros(params: &ParamSet<f32>) -> Self {
        let z: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { m: z.clone(), v: z }
    }
}

/// Adam with bias correction and decoupled weight decay:
/// `θ ← θ − lr·(m̂/(√v̂+ε) + decay·θ)`, decay applied only to parameters
/// flagged for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One update; `step` counts from 1.
    pub fn step(&self, params: &mut ParamSet<f32>, grads: &[Tensor<f32>], state: &mut AdamState, step: u64, lr: f64) -> Result<()> {
        if step == 0 {
            return Err(Error::Config("optimizer steps are counted from 1".into()));
        }
        if grads.len() != params.len() || state.m.len() != params.len() {
            return Err(Error::Config("gradient/moment count does not match parameters".into()));
        }
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            for (((theta, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                let m_new = self.beta1 * *mi as f64 + (1.0 - self.beta1) * gi;
                let v_new = self.beta2 * *vi as f64 + (1.0 - self.beta2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let m_hat = m_new / bc1;
                let v_hat = v_new / bc2;
                let t = *theta as f64;
                *theta = (t - lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * t)) as f32;
            }
        }
        Ok(())
    }
}
