//! Saliency-driven token-aware style augmentation.
//!
//! A fired sample takes per-channel style statistics interpolated towards
//! a random batch partner (`eps ~ Beta(0.1, 0.1)`), but only on the
//! `round(p_token · L)` tokens with the highest saliency. The remaining
//! tokens are copied unchanged. `p_token = 1` reduces to channel-level
//! statistics mixing over the whole sequence.

mod policy;
mod saliency;
mod stats;

pub use policy::{
    apply_plan, apply_plan_backward, apply_start, apply_start_recorded, plan_start, AugmentPolicy,
    AugmentVariant, BatchPlan, SamplePlan,
};
pub use saliency::{mask_count, saliency_m, saliency_x, top_p_mask, SaliencyMask};
pub use stats::{masked_mix_backward, mix_styles, style_stats, StyleStats, VARIANCE_FLOOR};
