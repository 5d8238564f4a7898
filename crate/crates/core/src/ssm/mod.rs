//! The discretized selective state space layer.
//!
//! A forward pass is `project_params → discretize → scan`. Three scan
//! evaluations are provided and agree to rounding: the token recurrence
//! ([`scan_sequential`]), the materialised lower-triangular attention form
//! ([`materialize_alpha`] then [`AlphaMatrix::apply`]), and an associative
//! prefix scan ([`scan_parallel`]). [`s6_backward`] gives exact gradients.
//!
//! `A` is diagonal per channel (`dim × state`), so every recurrence is an
//! independent scalar lane per `(channel, state)` pair.

mod alpha;
mod backward;
mod discretize;
mod params;
mod scan;

pub use alpha::{materialize_alpha, materialize_alpha_with_limit, AlphaMatrix, DEFAULT_ALPHA_LIMIT};
pub use backward::{s6_backward, LayerGradients};
pub use discretize::{
    discretize, zoh_factor, zoh_factor_direct, zoh_factor_taylor, Discretization,
    DiscretizedOperators, ZOH_TAYLOR_THRESHOLD,
};
pub use params::{project_params, Projections, SelectiveLayerParams, BLOCK_NAMES};
pub use scan::{
    affine_prefix_scan, parallel_kernel, scan_parallel, scan_sequential, sequential_kernel, ScanCache,
};

use crate::error::Result;
use crate::tensor::TokenSequence;

/// Which scan evaluation a forward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanKernel {
    #[default]
    Sequential,
    Parallel,
}

/// Projects, discretizes and scans with the sequential kernel.
pub fn s6_forward(x: &TokenSequence, p: &SelectiveLayerParams, mode: Discretization) -> Result<ScanCache> {
    s6_forward_with(x, p, mode, ScanKernel::Sequential)
}

pub fn s6_forward_with(
    x: &TokenSequence,
    p: &SelectiveLayerParams,
    mode: Discretization,
    kernel: ScanKernel,
) -> Result<ScanCache> {
    let proj = project_params(x, p)?;
    let ops = discretize(&proj.delta_raw, &proj.b, &proj.c, p, mode)?;
    match kernel {
        ScanKernel::Sequential => scan_sequential(&ops, x),
        ScanKernel::Parallel => scan_parallel(&ops, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, seeded};
    use crate::tensor::max_rel_diff;
    use alloc::vec;

    fn random_seq(len: usize, dim: usize, seed: u64) -> TokenSequence {
        let mut rng = seeded(seed);
        TokenSequence::from_fn(len, dim, |_, _| normal(&mut rng))
    }

    #[test]
    fn zero_input_gives_zero_everything() {
        let p = SelectiveLayerParams::random(2, 3, 0.5, &mut seeded(1));
        let x = TokenSequence::zeros(5, 2);
        for kernel in [ScanKernel::Sequential, ScanKernel::Parallel] {
            let c = s6_forward_with(&x, &p, Discretization::Zoh, kernel).unwrap();
            assert!(c.output.as_slice().iter().all(|&v| v == 0.0));
            assert!(c.hidden.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let p = SelectiveLayerParams::zeros(3, 2);
        let x = random_seq(4, 3, 2);
        let c = s6_forward(&x, &p, Discretization::Zoh).unwrap();
        assert!(c.output.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_is_diagonal_response() {
        let p = SelectiveLayerParams::random(2, 3, 0.7, &mut seeded(4));
        let x = random_seq(1, 2, 5);
        let c = s6_forward(&x, &p, Discretization::Zoh).unwrap();
        for d in 0..2 {
            let i = c.ops.idx(0, d, 0);
            let cb: f64 = (0..3).map(|n| c.ops.c.get(0, n) * c.ops.b_bar[i + n]).sum();
            assert!((c.output.get(0, d) - cb * x.get(0, d)).abs() < 1e-14);
        }
    }

    #[test]
    fn hand_computed_single_token() {
        // D = N = 1, A = -1, W_Δ = 0 with bias softplus^{-1}(1), W_B = 2, W_C = 3
        let mut p = SelectiveLayerParams::zeros(1, 1);
        p.b_delta = vec![libm::log(libm::exp(1.0) - 1.0)];
        p.w_b = vec![2.0];
        p.w_c = vec![3.0];
        let x = TokenSequence::new(1, 1, vec![0.5]).unwrap();
        let c = s6_forward(&x, &p, Discretization::Zoh).unwrap();
        // B = 1, C = 1.5, B̄ = 1 - e^{-1}
        let expected = 1.5 * (1.0 - libm::exp(-1.0)) * 1.0 * 0.5;
        assert!((c.output.get(0, 0) - expected).abs() < 1e-14);
    }

    #[test]
    fn l2_alpha_entry_matches_unrolling() {
        let p = SelectiveLayerParams::random(2, 3, 0.5, &mut seeded(6));
        let x = random_seq(2, 2, 7);
        let c = s6_forward(&x, &p, Discretization::Zoh).unwrap();
        let alpha = materialize_alpha(&c.ops).unwrap();
        for d in 0..2 {
            let expected: f64 = (0..3)
                .map(|n| c.ops.c.get(1, n) * c.ops.a_bar[c.ops.idx(1, d, n)] * c.ops.b_bar[c.ops.idx(0, d, n)])
                .sum();
            assert!((alpha.get(d, 1, 0) - expected).abs() < 1e-15);
            assert_eq!(alpha.get(d, 0, 1), 0.0);
        }
    }

    #[test]
    fn zero_input_matrix_gives_zero_alpha() {
        let mut p = SelectiveLayerParams::random(2, 2, 0.5, &mut seeded(8));
        p.w_b.fill(0.0);
        p.b_b.fill(0.0);
        let x = random_seq(6, 2, 9);
        let c = s6_forward(&x, &p, Discretization::Zoh).unwrap();
        let alpha = materialize_alpha(&c.ops).unwrap();
        assert!(alpha.values.iter().all(|&v| v == 0.0));
        assert!(alpha.apply(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alpha_guard_rejects_long_sequences() {
        let p = SelectiveLayerParams::random(1, 1, 0.5, &mut seeded(10));
        let x = random_seq(20, 1, 11);
        let c = s6_forward(&x, &p, Discretization::Zoh).unwrap();
        assert!(matches!(
            materialize_alpha_with_limit(&c.ops, 16),
            Err(crate::Error::TooLong { len: 20, limit: 16 })
        ));
        assert!(materialize_alpha_with_limit(&c.ops, 20).is_ok());
    }

    #[test]
    fn parallel_single_token_equals_sequential() {
        let p = SelectiveLayerParams::random(3, 2, 0.5, &mut seeded(12));
        let x = random_seq(1, 3, 13);
        let a = s6_forward_with(&x, &p, Discretization::Zoh, ScanKernel::Sequential).unwrap();
        let b = s6_forward_with(&x, &p, Discretization::Zoh, ScanKernel::Parallel).unwrap();
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn long_random_instance_parallel_matches_sequential() {
        let p = SelectiveLayerParams::random(4, 4, 0.5, &mut seeded(13));
        let x = random_seq(1024, 4, 13);
        let a = s6_forward_with(&x, &p, Discretization::Zoh, ScanKernel::Sequential).unwrap();
        let b = s6_forward_with(&x, &p, Discretization::Zoh, ScanKernel::Parallel).unwrap();
        assert!(max_rel_diff(b.output.as_slice(), a.output.as_slice(), 1e-300) <= 1e-10);
    }

    #[test]
    fn overflow_is_reported_with_token() {
        let mut p = SelectiveLayerParams::zeros(1, 1);
        p.b_b = vec![1e300];
        p.b_c = vec![1e300];
        p.b_delta = vec![5.0];
        let x = TokenSequence::new(3, 1, vec![0.0, 1e10, 1.0]).unwrap();
        let err = s6_forward(&x, &p, Discretization::Zoh).unwrap_err();
        assert_eq!(
            err,
            crate::Error::NonFinite {
                what: "scan output",
                token: 1
            }
        );
    }
}
