//! Kernel two-sample estimators for token-level domain gaps.
//!
//! [`mmd2`] is the biased (V-statistic) Gaussian-kernel MMD². [`to_mmd`]
//! averages it over token positions, treating each position's features as
//! a separate distribution. [`matrix_domain_gaps`] applies it to the Δ, B,
//! C and output matrices of a model layer, and [`accumulation_trace`]
//! decomposes how the per-token output gap builds up through the recurrence.

mod accumulation;
mod kernel;
mod report;
mod tommd;

pub use accumulation::{accumulation_trace, AccumulationTrace};
pub use kernel::{gaussian_kernel, median, mmd2, squared_distance, GammaMode};
pub use report::{matrix_domain_gaps, DomainGapReport, LayerTaps, PairGap, Quantity};
pub use tommd::{estimate_kappa_s, to_mmd, to_mmd_detailed, FeatureBank, ToMmd};
