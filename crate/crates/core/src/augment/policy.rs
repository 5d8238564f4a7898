use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{partner_index, symmetric_beta, uniform};
use crate::ssm::SelectiveLayerParams;
use crate::tensor::TokenSequence;

use super::saliency::{saliency_m, saliency_x, top_p_mask};
use super::stats::{masked_mix_backward, mix_with_stats, style_stats_unchecked};

/// How tokens are chosen for style perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AugmentVariant {
    /// Saliency from the layer's input-dependent matrices.
    StartM,
    /// Saliency from the token activations.
    StartX,
    /// Uniformly random scores ("w/o saliency guidance").
    RandomToken,
    /// Every token is perturbed ("w/o token selection").
    FullSequence,
    #[default]
    None,
}

impl AugmentVariant {
    pub const ALL: [AugmentVariant; 5] = [
        AugmentVariant::None,
        AugmentVariant::StartM,
        AugmentVariant::StartX,
        AugmentVariant::RandomToken,
        AugmentVariant::FullSequence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentVariant::StartM => "start-m",
            AugmentVariant::StartX => "start-x",
            AugmentVariant::RandomToken => "random-token",
            AugmentVariant::FullSequence => "full-seq",
            AugmentVariant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('-', "_") == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentPolicy {
    pub variant: AugmentVariant,
    pub p_token: f64,
    pub apply_prob: f64,
    pub beta_param: f64,
    pub training: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            variant: AugmentVariant::None,
            p_token: 0.75,
            apply_prob: 0.5,
            beta_param: 0.1,
            training: true,
        }
    }
}

impl AugmentPolicy {
    pub fn with_variant(variant: AugmentVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_token) || !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::InvalidArgument(
                "p_token and apply_prob must lie in [0, 1]".into(),
            ));
        }
        if !(self.beta_param > 0.0) || !self.beta_param.is_finite() {
            return Err(Error::InvalidArgument("beta_param must be positive".into()));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.training && self.variant != AugmentVariant::None
    }

    pub fn inference(self) -> Self {
        Self {
            training: false,
            ..self
        }
    }
}

/// What happened to one sample of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub partner: usize,
    pub eps: f64,
    pub mask: Vec<bool>,
}

/// Recorded random decisions of one augmentation call: `None` for samples
/// that were left untouched.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchPlan {
    pub samples: Vec<Option<SamplePlan>>,
}

impl BatchPlan {
    pub fn identity(n: usize) -> Self {
        Self {
            samples: alloc::vec![None; n],
        }
    }

    pub fn fired(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }
}

/// Draws the augmentation decisions for a batch.
///
/// Per sample, in batch order: a Bernoulli(`apply_prob`) coin, then for a
/// fired sample the partner, `eps ~ Beta(b, b)` and (for `RandomToken`)
/// one uniform score per token.
pub fn plan_start<R: Rng + ?Sized>(
    batch: &[TokenSequence],
    params: &SelectiveLayerParams,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<BatchPlan> {
    policy.validate()?;
    if !policy.is_active() {
        return Ok(BatchPlan::identity(batch.len()));
    }
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall(batch.len()));
    }
    let mut samples = Vec::with_capacity(batch.len());
    for (i, x) in batch.iter().enumerate() {
        if uniform(rng) >= policy.apply_prob {
            samples.push(None);
            continue;
        }
        let partner = partner_index(rng, batch.len(), i);
        let eps = symmetric_beta(rng, policy.beta_param);
        let (scores, p) = match policy.variant {
            AugmentVariant::StartM => (saliency_m(x, params)?, policy.p_token),
            AugmentVariant::StartX => (saliency_x(x), policy.p_token),
            AugmentVariant::RandomToken => ((0..x.len()).map(|_| uniform(rng)).collect(), policy.p_token),
            AugmentVariant::FullSequence => (alloc::vec![0.0; x.len()], 1.0),
            AugmentVariant::None => unreachable!(),
        };
        let mask = top_p_mask(&scores, p)?.mask;
        samples.push(Some(SamplePlan { partner, eps, mask }));
    }
    Ok(BatchPlan { samples })
}

/// Applies a recorded plan: masked tokens of fired samples take the mixed
/// style, all other rows are copied bit for bit.
pub fn apply_plan(batch: &[TokenSequence], plan: &BatchPlan) -> Result<Vec<TokenSequence>> {
    if plan.samples.len() != batch.len() {
        return Err(Error::Shape("plan and batch differ in size".into()));
    }
    let stats: Vec<_> = if plan.fired() > 0 {
        batch.iter().map(style_stats_unchecked).collect()
    } else {
        Vec::new()
    };
    batch
        .iter()
        .zip(&plan.samples)
        .enumerate()
        .map(|(i, (x, sp))| match sp {
            None => Ok(x.clone()),
            Some(sp) => {
                let partner = &batch[sp.partner];
                if !partner.same_shape(x) || sp.mask.len() != x.len() {
                    return Err(Error::Shape("style partner shape differs".into()));
                }
                let mixed = mix_with_stats(x, &stats[i], &stats[sp.partner], sp.eps);
                let mut out = x.clone();
                for (t, &m) in sp.mask.iter().enumerate() {
                    if m {
                        out.row_mut(t).copy_from_slice(mixed.row(t));
                    }
                }
                Ok(out)
            }
        })
        .collect()
}

/// Token-aware style augmentation of a training batch.
///
/// Identity when the policy is inactive (inference or variant `None`).
pub fn apply_start<R: Rng + ?Sized>(
    batch: &[TokenSequence],
    params: &SelectiveLayerParams,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<Vec<TokenSequence>> {
    Ok(apply_start_recorded(batch, params, policy, rng)?.0)
}

pub fn apply_start_recorded<R: Rng + ?Sized>(
    batch: &[TokenSequence],
    params: &SelectiveLayerParams,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<(Vec<TokenSequence>, BatchPlan)> {
    let plan = plan_start(batch, params, policy, rng)?;
    let out = apply_plan(batch, &plan)?;
    Ok((out, plan))
}

/// Backward of [`apply_plan`]: gradients with respect to the original
/// batch, including the cross-sample terms from partner statistics.
pub fn apply_plan_backward(
    batch: &[TokenSequence],
    plan: &BatchPlan,
    grads: &[TokenSequence],
) -> Result<Vec<TokenSequence>> {
    if grads.len() != batch.len() || plan.samples.len() != batch.len() {
        return Err(Error::Shape("gradient batch does not match".into()));
    }
    let mut out: Vec<TokenSequence> = batch
        .iter()
        .map(|x| TokenSequence::zeros(x.len(), x.dim()))
        .collect();
    for (i, sp) in plan.samples.iter().enumerate() {
        let own = match sp {
            None => grads[i].clone(),
            Some(sp) => {
                let (dx, dpartner) =
                    masked_mix_backward(&batch[i], &batch[sp.partner], sp.eps, &sp.mask, &grads[i])?;
                accumulate(&mut out[sp.partner], &dpartner);
                dx
            }
        };
        accumulate(&mut out[i], &own);
    }
    Ok(out)
}

fn accumulate(dst: &mut TokenSequence, src: &TokenSequence) {
    for (o, v) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *o += v;
    }
}
