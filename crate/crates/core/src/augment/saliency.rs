use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::ssm::{project_params, SelectiveLayerParams};
use crate::tensor::TokenSequence;

/// Per-token saliency scores and the binary augmentation mask derived from
/// them (`true` = the token receives the mixed style).
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
    pub p_token: f64,
}

impl SaliencyMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Saliency from the input-dependent matrices: the mean magnitude over
/// channels of the diagonal attention response,
/// `|⟨C_i, B_i⟩| · mean_d softplus(Δ_raw[i, d]) · |x[i, d]|`.
pub fn saliency_m(x: &TokenSequence, p: &SelectiveLayerParams) -> Result<Vec<f64>> {
    let proj = project_params(x, p)?;
    let dim = x.dim() as f64;
    Ok((0..x.len())
        .map(|i| {
            let cb: f64 = proj.c.row(i).iter().zip(proj.b.row(i)).map(|(c, b)| c * b).sum();
            let resp: f64 = proj
                .delta_raw
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(&r, &v)| math::softplus(r) * v.abs())
                .sum();
            cb.abs() * resp / dim
        })
        .collect())
}

/// Saliency from the activations alone: mean absolute value of each token.
pub fn saliency_x(x: &TokenSequence) -> Vec<f64> {
    let dim = x.dim() as f64;
    (0..x.len())
        .map(|i| x.row(i).iter().map(|v| v.abs()).sum::<f64>() / dim)
        .collect()
}

/// Number of tokens selected for a fraction `p_token` of `len`.
pub fn mask_count(len: usize, p_token: f64) -> usize {
    (libm::round(p_token * len as f64) as usize).min(len)
}

/// Marks the `round(p_token · L)` highest scores; ties go to the lower index.
pub fn top_p_mask(scores: &[f64], p_token: f64) -> Result<SaliencyMask> {
    if !(0.0..=1.0).contains(&p_token) {
        return Err(Error::InvalidArgument(alloc::format!(
            "p_token must lie in [0, 1], got {p_token}"
        )));
    }
    let k = mask_count(scores.len(), p_token);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps lower indices first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut mask = vec![false; scores.len()];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(SaliencyMask {
        scores: scores.to_vec(),
        mask,
        p_token,
    })
}
