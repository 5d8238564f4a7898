use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ssm::ScanCache;
use crate::tensor::TokenSequence;

use super::kernel::GammaMode;
use super::tommd::{to_mmd_detailed, FeatureBank};

/// Anything that can expose the scan cache of one of its selective layers
/// for a given input.
pub trait LayerTaps {
    fn layer_count(&self) -> usize;
    fn tap(&self, x: &TokenSequence, layer: usize) -> Result<ScanCache>;
}

/// The quantities compared across domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Quantity {
    /// Post-softplus Δ.
    Delta,
    B,
    C,
    /// Layer output.
    Features,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [Quantity::Delta, Quantity::B, Quantity::C, Quantity::Features];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Delta => "delta",
            Quantity::B => "B",
            Quantity::C => "C",
            Quantity::Features => "features",
        }
    }

    fn extract(self, cache: &ScanCache) -> TokenSequence {
        match self {
            Quantity::Delta => cache.ops.delta.clone(),
            Quantity::B => cache.ops.b.clone(),
            Quantity::C => cache.ops.c.clone(),
            Quantity::Features => cache.output.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairGap {
    pub quantity: Quantity,
    pub domain_a: String,
    pub domain_b: String,
    pub value: f64,
    pub gamma: f64,
}

/// Token-level domain gaps of one layer. The four headline numbers are the
/// maxima over domain pairs; `pairs` holds every pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DomainGapReport {
    pub layer: usize,
    pub gap_delta: f64,
    pub gap_b: f64,
    pub gap_c: f64,
    pub gap_features: f64,
    pub pairs: Vec<PairGap>,
}

impl DomainGapReport {
    pub fn max(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Delta => self.gap_delta,
            Quantity::B => self.gap_b,
            Quantity::C => self.gap_c,
            Quantity::Features => self.gap_features,
        }
    }

    /// Average over domain pairs.
    pub fn mean(&self, q: Quantity) -> f64 {
        let vals: Vec<f64> = self.pairs.iter().filter(|p| p.quantity == q).map(|p| p.value).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

/// Runs every domain's inputs through `model`, harvests Δ, B, C and the
/// output at `layer`, and compares all domain pairs with [`to_mmd`](super::to_mmd).
pub fn matrix_domain_gaps<M: LayerTaps + ?Sized>(
    model: &M,
    banks: &[FeatureBank],
    layer: usize,
    gamma_mode: GammaMode,
) -> Result<DomainGapReport> {
    if banks.len() < 2 {
        return Err(Error::TooFewDomains(banks.len()));
    }
    if layer >= model.layer_count() {
        return Err(Error::InvalidArgument(alloc::format!(
            "layer {layer} out of range for a {}-layer model",
            model.layer_count()
        )));
    }
    // per domain, per quantity
    let mut harvested: Vec<[FeatureBank; 4]> = Vec::with_capacity(banks.len());
    for bank in banks {
        bank.shape()?;
        let caches = bank
            .samples
            .iter()
            .map(|x| model.tap(x, layer))
            .collect::<Result<Vec<_>>>()?;
        let per_q = Quantity::ALL.map(|q| FeatureBank {
            domain_id: bank.domain_id.clone(),
            samples: caches.iter().map(|c| q.extract(c)).collect(),
        });
        harvested.push(per_q);
    }
    let mut pairs = Vec::new();
    let mut maxima = [0.0f64; 4];
    for i in 0..banks.len() {
        for j in i + 1..banks.len() {
            for (qi, q) in Quantity::ALL.into_iter().enumerate() {
                let r = to_mmd_detailed(&harvested[i][qi], &harvested[j][qi], gamma_mode)?;
                maxima[qi] = maxima[qi].max(r.value);
                pairs.push(PairGap {
                    quantity: q,
                    domain_a: banks[i].domain_id.clone(),
                    domain_b: banks[j].domain_id.clone(),
                    value: r.value,
                    gamma: r.gamma,
                });
            }
        }
    }
    Ok(DomainGapReport {
        layer,
        gap_delta: maxima[0],
        gap_b: maxima[1],
        gap_c: maxima[2],
        gap_features: maxima[3],
        pairs,
    })
}
