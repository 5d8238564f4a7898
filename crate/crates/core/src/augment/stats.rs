use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::math;
use crate::tensor::TokenSequence;

/// Added to the population variance before the square root.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Per-channel mean and floored standard deviation over the token axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn style_stats(x: &TokenSequence) -> Result<StyleStats> {
    x.check_finite("input")?;
    Ok(style_stats_unchecked(x))
}

pub(crate) fn style_stats_unchecked(x: &TokenSequence) -> StyleStats {
    let (len, dim) = (x.len(), x.dim());
    let inv = 1.0 / len as f64;
    let mut mu = vec![0.0; dim];
    for t in 0..len {
        for (m, v) in mu.iter_mut().zip(x.row(t)) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m *= inv);
    let mut var = vec![0.0; dim];
    for t in 0..len {
        for ((s, v), m) in var.iter_mut().zip(x.row(t)).zip(&mu) {
            *s += (v - m) * (v - m);
        }
    }
    let sigma = var
        .into_iter()
        .map(|s| math::sqrt(s * inv + VARIANCE_FLOOR))
        .collect();
    StyleStats { mu, sigma }
}

fn check_pair(x: &TokenSequence, other: &TokenSequence) -> Result<()> {
    if !x.same_shape(other) {
        return Err(shape_err(alloc::format!(
            "style partner is {}x{}, sample is {}x{}",
            other.len(),
            other.dim(),
            x.len(),
            x.dim()
        )));
    }
    Ok(())
}

/// Restyles `x` with statistics interpolated towards `x_other`:
/// `x̃ = σ̃ ⊙ (x - μ) / σ + μ̃`, `μ̃ = eps·μ + (1-eps)·μ'`, `σ̃` likewise.
pub fn mix_styles(x: &TokenSequence, x_other: &TokenSequence, eps: f64) -> Result<TokenSequence> {
    check_pair(x, x_other)?;
    x.check_finite("input")?;
    x_other.check_finite("style partner")?;
    Ok(mix_with_stats(
        x,
        &style_stats_unchecked(x),
        &style_stats_unchecked(x_other),
        eps,
    ))
}

pub(crate) fn mixed_stats(own: &StyleStats, other: &StyleStats, eps: f64) -> StyleStats {
    let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(p, q)| eps * p + (1.0 - eps) * q).collect()
    };
    StyleStats {
        mu: lerp(&own.mu, &other.mu),
        sigma: lerp(&own.sigma, &other.sigma),
    }
}

pub(crate) fn mix_with_stats(
    x: &TokenSequence,
    own: &StyleStats,
    other: &StyleStats,
    eps: f64,
) -> TokenSequence {
    if eps == 1.0 {
        // own statistics re-applied: exact identity, free of rounding
        return x.clone();
    }
    let mixed = mixed_stats(own, other, eps);
    TokenSequence::from_fn(x.len(), x.dim(), |t, d| {
        mixed.sigma[d] * (x.get(t, d) - own.mu[d]) / own.sigma[d] + mixed.mu[d]
    })
}

/// Backward of "replace the rows flagged in `mask` by `mix_styles(x, x_other, eps)`".
///
/// `grad` is the gradient with respect to the augmented sequence. Unmasked
/// rows pass straight through; masked rows flow into both samples through
/// their statistics. Returns `(d x, d x_other)`.
pub fn masked_mix_backward(
    x: &TokenSequence,
    x_other: &TokenSequence,
    eps: f64,
    mask: &[bool],
    grad: &TokenSequence,
) -> Result<(TokenSequence, TokenSequence)> {
    check_pair(x, x_other)?;
    if !grad.same_shape(x) || mask.len() != x.len() {
        return Err(shape_err("gradient or mask does not match the sample"));
    }
    let (len, dim) = (x.len(), x.dim());
    let own = style_stats_unchecked(x);
    let other = style_stats_unchecked(x_other);
    let mixed = mixed_stats(&own, &other, eps);
    let inv = 1.0 / len as f64;

    let mut dx = TokenSequence::zeros(len, dim);
    let mut dother = TokenSequence::zeros(len, dim);
    for d in 0..dim {
        let (mu, sigma) = (own.mu[d], own.sigma[d]);
        let mut d_mu_mix = 0.0;
        let mut d_sigma_mix = 0.0;
        // gradient w.r.t. the standardised values z_t = (x_t - μ)/σ
        let mut dz_sum = 0.0;
        let mut dz_z_sum = 0.0;
        for t in 0..len {
            let g = grad.get(t, d);
            if mask[t] {
                let z = (x.get(t, d) - mu) / sigma;
                d_mu_mix += g;
                d_sigma_mix += g * z;
                let dz = mixed.sigma[d] * g;
                dz_sum += dz;
                dz_z_sum += dz * z;
            } else {
                dx.row_mut(t)[d] += g;
            }
        }
        // own statistics enter through μ̃, σ̃ and through z
        let d_mu = eps * d_mu_mix;
        let d_sigma = eps * d_sigma_mix;
        for t in 0..len {
            let z = (x.get(t, d) - mu) / sigma;
            let dz = if mask[t] { mixed.sigma[d] * grad.get(t, d) } else { 0.0 };
            let through_z = (dz - inv * dz_sum - z * inv * dz_z_sum) / sigma;
            // ∂σ/∂x_t = (x_t - μ)/(Lσ) = z/L, ∂μ/∂x_t = 1/L
            dx.row_mut(t)[d] += through_z + d_mu * inv + d_sigma * z * inv;
        }
        let (mu_o, sigma_o) = (other.mu[d], other.sigma[d]);
        let d_mu_o = (1.0 - eps) * d_mu_mix;
        let d_sigma_o = (1.0 - eps) * d_sigma_mix;
        for t in 0..len {
            let z_o = (x_other.get(t, d) - mu_o) / sigma_o;
            dother.row_mut(t)[d] += d_mu_o * inv + d_sigma_o * z_o * inv;
        }
    }
    Ok((dx, dother))
}
