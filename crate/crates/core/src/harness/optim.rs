use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π t / T))` for `0 ≤ t ≤ T`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if t > total {
        return Err(Error::InvalidArgument(alloc::format!(
            "step {t} is past the schedule length {total}"
        )));
    }
    if total == 0 {
        return Ok(lr0);
    }
    let frac = t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math::cos(core::f64::consts::PI * frac)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moments for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamWState {
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(block_sizes: &[usize]) -> Self {
        Self {
            step: 0,
            m: block_sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `p ← p − lr·(m̂ / (√v̂ + eps) + wd·p)`.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and state blocks differ".into()));
    }
    for g in grads {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                token: i,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape("block size changed between steps".into()));
        }
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (math::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p[i]);
        }
    }
    Ok(())
}
