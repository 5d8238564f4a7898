use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::TokenSequence;

use super::kernel::{resolve_gamma, GammaMode, PooledDistances};

/// Token-aligned features of one domain: `samples[m]` is an `L × W` matrix
/// whose row `t` is a draw from the domain's distribution at token `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub domain_id: String,
    pub samples: Vec<TokenSequence>,
}

impl FeatureBank {
    pub fn new(domain_id: impl Into<String>, samples: Vec<TokenSequence>) -> Result<Self> {
        let bank = Self {
            domain_id: domain_id.into(),
            samples,
        };
        bank.shape()?;
        Ok(bank)
    }

    /// `(len, width)` shared by every sample.
    pub fn shape(&self) -> Result<(usize, usize)> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("bank {} is empty", self.domain_id)))?;
        if self.samples.iter().any(|s| !s.same_shape(first)) {
            return Err(shape_err(alloc::format!(
                "bank {} mixes sample shapes",
                self.domain_id
            )));
        }
        Ok((first.len(), first.dim()))
    }

    fn tokens(&self, t: usize) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.row(t)).collect()
    }
}

/// Value and bandwidth of one token-level MMD evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToMmd {
    pub value: f64,
    pub gamma: f64,
}

/// Token-level MMD: the average over token positions of the MMD² between
/// the two domains' empirical distributions at that position.
///
/// With [`GammaMode::Median`] a single bandwidth is shared by all positions:
/// the median squared distance over every within-position pooled pair.
pub fn to_mmd(s: &FeatureBank, t: &FeatureBank, gamma_mode: GammaMode) -> Result<f64> {
    Ok(to_mmd_detailed(s, t, gamma_mode)?.value)
}

pub fn to_mmd_detailed(s: &FeatureBank, t: &FeatureBank, gamma_mode: GammaMode) -> Result<ToMmd> {
    let shape = s.shape()?;
    if t.shape()? != shape {
        return Err(shape_err(alloc::format!(
            "banks {} and {} disagree on token shape",
            s.domain_id,
            t.domain_id
        )));
    }
    let len = shape.0;
    let tables: Vec<PooledDistances> = (0..len)
        .map(|i| PooledDistances::new(&s.tokens(i), &t.tokens(i)))
        .collect();
    let gamma = resolve_gamma(gamma_mode, tables.iter())?;
    let total: f64 = crate::math::compensated_sum(tables.iter().map(|tab| tab.mmd2(gamma)));
    Ok(ToMmd {
        value: total / len as f64,
        gamma,
    })
}

/// Largest pairwise token-level MMD among the given domains.
pub fn estimate_kappa_s(banks: &[FeatureBank], gamma_mode: GammaMode) -> Result<f64> {
    if banks.len() < 2 {
        return Err(Error::TooFewDomains(banks.len()));
    }
    let mut best = 0.0f64;
    for i in 0..banks.len() {
        for j in i + 1..banks.len() {
            best = best.max(to_mmd(&banks[i], &banks[j], gamma_mode)?);
        }
    }
    Ok(best)
}
