use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::rng::normal;
use crate::tensor::TokenSequence;

/// Weights of one selective state space layer.
///
/// `a_log` is `dim × state`; the decay is recovered as `A = -exp(a_log)`.
/// Projection matrices are stored input-major: `w_delta[i * dim + j]` maps
/// input channel `i` to output channel `j`, and likewise for `w_b`/`w_c`
/// with `state` outputs.
///
/// The same struct doubles as the gradient container for the layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectiveLayerParams {
    pub dim: usize,
    pub state: usize,
    pub a_log: Vec<f64>,
    pub w_b: Vec<f64>,
    pub b_b: Vec<f64>,
    pub w_c: Vec<f64>,
    pub b_c: Vec<f64>,
    pub w_delta: Vec<f64>,
    pub b_delta: Vec<f64>,
}

/// Names of the parameter blocks, in [`SelectiveLayerParams::blocks`] order.
pub const BLOCK_NAMES: [&str; 7] = ["a_log", "w_b", "b_b", "w_c", "b_c", "w_delta", "b_delta"];

impl SelectiveLayerParams {
    pub fn zeros(dim: usize, state: usize) -> Self {
        Self {
            dim,
            state,
            a_log: vec![0.0; dim * state],
            w_b: vec![0.0; dim * state],
            b_b: vec![0.0; state],
            w_c: vec![0.0; dim * state],
            b_c: vec![0.0; state],
            w_delta: vec![0.0; dim * dim],
            b_delta: vec![0.0; dim],
        }
    }

    /// Every entry drawn from `N(0, scale²)`. Handy for property tests.
    pub fn random<R: Rng + ?Sized>(dim: usize, state: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim, state);
        for block in p.blocks_mut() {
            for v in block.iter_mut() {
                *v = scale * normal(rng);
            }
        }
        p
    }

    /// Initialisation used by the classifier: `A[d, n] = -(n + 1)`,
    /// projections `N(0, 1/dim)`, and Δ biases placing `softplus(bias)`
    /// log-uniformly in `[1e-2, 1e-1]`.
    pub fn init<R: Rng + ?Sized>(dim: usize, state: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim, state);
        for d in 0..dim {
            for n in 0..state {
                p.a_log[d * state + n] = libm::log((n + 1) as f64);
            }
        }
        let std = 1.0 / math::sqrt(dim as f64);
        for w in [&mut p.w_b, &mut p.w_c, &mut p.w_delta] {
            for v in w.iter_mut() {
                *v = std * normal(rng);
            }
        }
        let (lo, hi) = (libm::log(1e-2), libm::log(1e-1));
        for b in p.b_delta.iter_mut() {
            let dt = math::exp(lo + (hi - lo) * rng.random::<f64>());
            // inverse softplus
            *b = dt + libm::log(-math::expm1(-dt));
        }
        p
    }

    /// `A = -exp(a_log)`, `dim × state`.
    pub fn decay(&self) -> Vec<f64> {
        self.a_log.iter().map(|&v| -math::exp(v)).collect()
    }

    pub fn blocks(&self) -> [&[f64]; 7] {
        [
            &self.a_log,
            &self.w_b,
            &self.b_b,
            &self.w_c,
            &self.b_c,
            &self.w_delta,
            &self.b_delta,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.a_log,
            &mut self.w_b,
            &mut self.b_b,
            &mut self.w_c,
            &mut self.b_c,
            &mut self.w_delta,
            &mut self.b_delta,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim, self.state)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for b in out.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    /// Checks block sizes, finiteness, and that `A` is strictly negative.
    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.dim, self.state);
        if d == 0 || n == 0 {
            return Err(shape_err("dim and state must be positive"));
        }
        let expected = [d * n, d * n, n, d * n, n, d * d, d];
        for ((block, want), name) in self.blocks().iter().zip(expected).zip(BLOCK_NAMES) {
            if block.len() != want {
                return Err(shape_err(alloc::format!(
                    "{name}: expected {want} values, got {}",
                    block.len()
                )));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(alloc::format!("{name} has non-finite weights")));
            }
        }
        Ok(())
    }
}

/// Raw input-dependent projections of one sequence: Δ before softplus,
/// then B and C.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub delta_raw: TokenSequence,
    pub b: TokenSequence,
    pub c: TokenSequence,
}

fn affine_rows(x: &TokenSequence, w: &[f64], bias: &[f64]) -> TokenSequence {
    let (len, din, dout) = (x.len(), x.dim(), bias.len());
    let mut out = Vec::with_capacity(len * dout);
    for t in 0..len {
        let row = x.row(t);
        out.extend_from_slice(bias);
        let dst = &mut out[t * dout..];
        for (i, &xi) in row.iter().enumerate().take(din) {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * dout..(i + 1) * dout];
            for (o, &wv) in dst.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    TokenSequence::from_raw(len, dout, out)
}

/// Applies `S_Δ`, `S_B`, `S_C` to every token independently.
pub fn project_params(x: &TokenSequence, p: &SelectiveLayerParams) -> Result<Projections> {
    p.validate()?;
    if x.dim() != p.dim {
        return Err(shape_err(alloc::format!(
            "input has {} channels, layer expects {}",
            x.dim(),
            p.dim
        )));
    }
    x.check_finite("input")?;
    Ok(Projections {
        delta_raw: affine_rows(x, &p.w_delta, &p.b_delta),
        b: affine_rows(x, &p.w_b, &p.b_b),
        c: affine_rows(x, &p.w_c, &p.b_c),
    })
}
