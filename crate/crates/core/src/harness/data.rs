use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{normal, split};
use crate::tensor::TokenSequence;

/// Synthetic multi-domain sequence classification benchmark.
///
/// Classes are smooth per-channel token templates shared by every domain;
/// a domain is a per-channel affine style (scale, shift) applied on top,
/// plus i.i.d. noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthDGConfig {
    pub num_domains: usize,
    pub num_classes: usize,
    pub len: usize,
    pub dim: usize,
    pub samples_per_domain_per_class: usize,
    pub domain_style_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthDGConfig {
    fn default() -> Self {
        Self {
            num_domains: 4,
            num_classes: 5,
            len: 32,
            dim: 8,
            samples_per_domain_per_class: 40,
            domain_style_strength: 0.5,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl SynthDGConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 3 {
            return Err(Error::InvalidArgument(
                "leave-one-domain-out needs at least three domains".into(),
            ));
        }
        if self.num_classes < 2 || self.len == 0 || self.dim == 0 || self.samples_per_domain_per_class == 0 {
            return Err(Error::InvalidArgument("empty benchmark dimensions".into()));
        }
        if !(self.domain_style_strength >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("style strength and noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Labeled samples of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub domain: usize,
    pub samples: Vec<TokenSequence>,
    pub labels: Vec<usize>,
}

/// Per-channel affine style of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStyle {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// The fixed part of a benchmark: class templates and domain styles. Any
/// number of independent sample splits can be drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: SynthDGConfig,
    pub templates: Vec<TokenSequence>,
    pub styles: Vec<DomainStyle>,
}

const TEMPLATE_STREAM: u64 = 1;
const STYLE_STREAM: u64 = 2;
const HARMONICS: usize = 3;

impl SynthWorld {
    pub fn new(config: SynthDGConfig) -> Result<Self> {
        config.validate()?;
        let (len, dim) = (config.len, config.dim);
        let mut rng = split(config.seed, TEMPLATE_STREAM);
        let templates = (0..config.num_classes)
            .map(|_| {
                let mut tpl = TokenSequence::zeros(len, dim);
                for d in 0..dim {
                    let coeffs: Vec<(f64, f64)> = (0..HARMONICS)
                        .map(|_| (normal(&mut rng), 2.0 * core::f64::consts::PI * crate::rng::uniform(&mut rng)))
                        .collect();
                    let col: Vec<f64> = (0..len)
                        .map(|t| {
                            coeffs
                                .iter()
                                .enumerate()
                                .map(|(f, &(a, phase))| {
                                    let w = 2.0 * core::f64::consts::PI * (f + 1) as f64 / len as f64;
                                    a * libm::sin(w * t as f64 + phase)
                                })
                                .sum()
                        })
                        .collect();
                    let mean = col.iter().sum::<f64>() / len as f64;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
                    let std = math::sqrt(var).max(1e-12);
                    for (t, v) in col.iter().enumerate() {
                        tpl.set(t, d, (v - mean) / std);
                    }
                }
                tpl
            })
            .collect();
        let mut rng = split(config.seed, STYLE_STREAM);
        let s = config.domain_style_strength;
        let styles = (0..config.num_domains)
            .map(|_| DomainStyle {
                scale: (0..dim).map(|_| math::exp(0.5 * s * normal(&mut rng))).collect(),
                shift: (0..dim).map(|_| s * normal(&mut rng)).collect(),
            })
            .collect();
        Ok(Self {
            config,
            templates,
            styles,
        })
    }

    /// Draws one split of every domain. Different `split_id`s give
    /// independent samples from the same domains.
    pub fn sample(&self, split_id: u64) -> Vec<DomainData> {
        let cfg = &self.config;
        (0..cfg.num_domains)
            .map(|dom| {
                let mut rng = split(cfg.seed ^ (split_id.wrapping_mul(0x9e37_79b9_7f4a_7c15)), 16 + dom as u64);
                let style = &self.styles[dom];
                let mut samples = Vec::new();
                let mut labels = Vec::new();
                for class in 0..cfg.num_classes {
                    let tpl = &self.templates[class];
                    for _ in 0..cfg.samples_per_domain_per_class {
                        let x = TokenSequence::from_fn(cfg.len, cfg.dim, |t, d| {
                            let content = tpl.get(t, d) + cfg.noise_std * normal(&mut rng);
                            style.scale[d] * content + style.shift[d]
                        });
                        samples.push(x);
                        labels.push(class);
                    }
                }
                DomainData {
                    domain: dom,
                    samples,
                    labels,
                }
            })
            .collect()
    }
}

/// Training split of the benchmark described by `cfg`.
pub fn synth_dataset(cfg: &SynthDGConfig) -> Result<Vec<DomainData>> {
    Ok(SynthWorld::new(*cfg)?.sample(0))
}
