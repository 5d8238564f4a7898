use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::TokenSequence;

use super::params::SelectiveLayerParams;

/// Below this |ΔA| the zero-order-hold factor uses its Taylor series.
pub const ZOH_TAYLOR_THRESHOLD: f64 = 1e-6;

/// Continuous-to-discrete conversion rule for the input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Discretization {
    /// `B̄ = (exp(ΔA) - 1) / A · B`.
    #[default]
    Zoh,
    /// `B̄ = Δ · B`.
    Euler,
}

/// `(e^z - 1) / z` evaluated directly.
pub fn zoh_factor_direct(z: f64) -> f64 {
    (math::exp(z) - 1.0) / z
}

/// Second-order Taylor series of `(e^z - 1) / z` around zero.
pub fn zoh_factor_taylor(z: f64) -> f64 {
    1.0 + z * (0.5 + z / 6.0)
}

/// `(e^z - 1) / z`, switching to the series for `|z| < ZOH_TAYLOR_THRESHOLD`.
pub fn zoh_factor(z: f64) -> f64 {
    if z.abs() < ZOH_TAYLOR_THRESHOLD {
        zoh_factor_taylor(z)
    } else {
        math::expm1(z) / z
    }
}

/// Per-token discrete operators of a selective layer.
///
/// `a_bar`/`b_bar` are `len × dim × state`, indexed `(t * dim + d) * state + n`.
/// `b`, `delta_raw` and the continuous decay `a` are kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedOperators {
    pub len: usize,
    pub dim: usize,
    pub state: usize,
    pub mode: Discretization,
    pub a: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub b: TokenSequence,
    pub c: TokenSequence,
    pub delta_raw: TokenSequence,
    pub delta: TokenSequence,
}

impl DiscretizedOperators {
    #[inline]
    pub fn idx(&self, t: usize, d: usize, n: usize) -> usize {
        (t * self.dim + d) * self.state + n
    }
}

/// Softplus on Δ, then `Ā = exp(ΔA)` and `B̄` by `mode`.
pub fn discretize(
    delta_raw: &TokenSequence,
    b: &TokenSequence,
    c: &TokenSequence,
    p: &SelectiveLayerParams,
    mode: Discretization,
) -> Result<DiscretizedOperators> {
    let (len, dim, state) = (delta_raw.len(), p.dim, p.state);
    if delta_raw.dim() != dim || b.dim() != state || c.dim() != state {
        return Err(shape_err("projection widths do not match the layer"));
    }
    if b.len() != len || c.len() != len {
        return Err(shape_err("projections disagree on sequence length"));
    }
    let a = p.decay();
    if let Some(i) = a.iter().position(|&v| !(v < 0.0)) {
        return Err(Error::Unstable {
            channel: i / state,
            state: i % state,
            value: a[i],
        });
    }
    let delta = delta_raw.map(math::softplus);
    let mut a_bar = Vec::with_capacity(len * dim * state);
    let mut b_bar = Vec::with_capacity(len * dim * state);
    for t in 0..len {
        let b_row = b.row(t);
        for d in 0..dim {
            let dt = delta.get(t, d);
            let a_row = &a[d * state..(d + 1) * state];
            for (&an, &bn) in a_row.iter().zip(b_row) {
                let z = dt * an;
                a_bar.push(math::exp(z));
                b_bar.push(match mode {
                    Discretization::Zoh => dt * zoh_factor(z) * bn,
                    Discretization::Euler => dt * bn,
                });
            }
        }
    }
    Ok(DiscretizedOperators {
        len,
        dim,
        state,
        mode,
        a,
        a_bar,
        b_bar,
        b: b.clone(),
        c: c.clone(),
        delta_raw: delta_raw.clone(),
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_layer(a: f64) -> SelectiveLayerParams {
        let mut p = SelectiveLayerParams::zeros(1, 1);
        p.a_log = vec![libm::log(-a)];
        p
    }

    /// softplus^{-1}(1)
    fn raw_for_unit_delta() -> f64 {
        libm::log(libm::exp(1.0) - 1.0)
    }

    #[test]
    fn scalar_zoh_closed_form() {
        let p = scalar_layer(-1.0);
        let raw = TokenSequence::new(1, 1, vec![raw_for_unit_delta()]).unwrap();
        let one = TokenSequence::new(1, 1, vec![1.0]).unwrap();
        let ops = discretize(&raw, &one, &one, &p, Discretization::Zoh).unwrap();
        assert!((ops.delta.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((ops.a_bar[0] - 0.36787944117144233).abs() < 1e-12);
        assert!((ops.b_bar[0] - 0.6321205588285577).abs() < 1e-12);
    }

    #[test]
    fn vanishing_step_limits() {
        let p = scalar_layer(-2.0);
        let raw = TokenSequence::new(1, 1, vec![-60.0]).unwrap();
        let one = TokenSequence::new(1, 1, vec![1.0]).unwrap();
        for mode in [Discretization::Zoh, Discretization::Euler] {
            let ops = discretize(&raw, &one, &one, &p, mode).unwrap();
            assert!((ops.a_bar[0] - 1.0).abs() < 1e-20);
            assert!(ops.b_bar[0].abs() < 1e-20);
        }
    }

    #[test]
    fn tiny_decay_hits_taylor_branch_and_matches_euler() {
        let p = scalar_layer(-1e-9);
        let raw = TokenSequence::new(1, 1, vec![raw_for_unit_delta()]).unwrap();
        let one = TokenSequence::new(1, 1, vec![1.0]).unwrap();
        let zoh = discretize(&raw, &one, &one, &p, Discretization::Zoh).unwrap();
        let euler = discretize(&raw, &one, &one, &p, Discretization::Euler).unwrap();
        assert!((zoh.b_bar[0] - 1.0).abs() <= 1e-9);
        assert!((zoh.b_bar[0] - euler.b_bar[0]).abs() <= 1e-9);
        // (e^z - 1)/z ≈ 1 + z/2 series oracle
        let z = -1e-9;
        assert!((zoh_factor(z) - (1.0 + z / 2.0)).abs() < 1e-17);
    }

    #[test]
    fn taylor_and_direct_agree_near_threshold() {
        for &z in &[-1e-5, 1e-5, -3e-6, 2e-6] {
            let rel = (zoh_factor_taylor(z) - zoh_factor_direct(z)).abs() / zoh_factor_direct(z);
            assert!(rel <= 1e-9, "z={z} rel={rel}");
        }
    }

    #[test]
    fn rejects_non_negative_decay() {
        let mut p = scalar_layer(-1.0);
        p.a_log = vec![-800.0]; // exp underflows, A = -0
        let one = TokenSequence::new(1, 1, vec![1.0]).unwrap();
        let err = discretize(&one, &one, &one, &p, Discretization::Zoh).unwrap_err();
        assert!(matches!(err, Error::Unstable { channel: 0, state: 0, .. }));
    }
}
