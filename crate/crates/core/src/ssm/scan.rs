use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::TokenSequence;

use super::discretize::DiscretizedOperators;

/// Everything a forward pass produced: the input, the discrete operators,
/// the hidden trajectory (`len × dim × state`, same layout as `a_bar`) and
/// the output `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCache {
    pub input: TokenSequence,
    pub ops: DiscretizedOperators,
    pub hidden: Vec<f64>,
    pub output: TokenSequence,
}

impl ScanCache {
    /// Hidden state of channel `d` after token `t`.
    pub fn state(&self, t: usize, d: usize) -> &[f64] {
        let i = self.ops.idx(t, d, 0);
        &self.hidden[i..i + self.ops.state]
    }
}

fn check_inputs(ops: &DiscretizedOperators, x: &TokenSequence) -> Result<()> {
    if x.len() != ops.len || x.dim() != ops.dim {
        return Err(shape_err(alloc::format!(
            "input is {}x{}, operators are {}x{}",
            x.len(),
            x.dim(),
            ops.len,
            ops.dim
        )));
    }
    x.check_finite("input")
}

fn readout(ops: &DiscretizedOperators, hidden: &[f64]) -> Result<TokenSequence> {
    let (len, dim, state) = (ops.len, ops.dim, ops.state);
    let mut y = Vec::with_capacity(len * dim);
    for t in 0..len {
        let c = ops.c.row(t);
        for d in 0..dim {
            let h = &hidden[(t * dim + d) * state..(t * dim + d + 1) * state];
            y.push(c.iter().zip(h).map(|(a, b)| a * b).sum());
        }
        if y[t * dim..].iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "scan output",
                token: t,
            });
        }
    }
    Ok(TokenSequence::from_raw(len, dim, y))
}

/// `h_t = Ā_t ⊙ h_{t-1} + B̄_t x_t`, `y_t = C_t · h_t`, token by token from
/// `h_0 = 0`.
pub fn scan_sequential(ops: &DiscretizedOperators, x: &TokenSequence) -> Result<ScanCache> {
    let (hidden, output) = sequential_kernel(ops, x)?;
    Ok(ScanCache {
        input: x.clone(),
        ops: ops.clone(),
        hidden,
        output,
    })
}

/// Hidden trajectory and output of [`scan_sequential`] without the cache copies.
pub fn sequential_kernel(ops: &DiscretizedOperators, x: &TokenSequence) -> Result<(Vec<f64>, TokenSequence)> {
    check_inputs(ops, x)?;
    let (len, dim, state) = (ops.len, ops.dim, ops.state);
    let mut hidden = vec![0.0; len * dim * state];
    for t in 0..len {
        for d in 0..dim {
            let xt = x.get(t, d);
            let cur = ops.idx(t, d, 0);
            for n in 0..state {
                let prev = if t == 0 {
                    0.0
                } else {
                    hidden[cur - dim * state + n]
                };
                hidden[cur + n] = ops.a_bar[cur + n] * prev + ops.b_bar[cur + n] * xt;
            }
        }
    }
    let output = readout(ops, &hidden)?;
    Ok((hidden, output))
}

/// Inclusive scan of the affine maps `h ↦ a[i]·h + b[i]` under
/// `(a₁, b₁) ∘ (a₂, b₂) = (a₂a₁, a₂b₁ + b₂)` (left operand applied first).
///
/// Work-efficient two-sweep (up-sweep/down-sweep) tree over a power-of-two
/// padded buffer. On return `b[i]` is the state after step `i` from a zero
/// start and `a[i]` the accumulated decay.
pub fn affine_prefix_scan(a: &mut [f64], b: &mut [f64], scratch: &mut Vec<(f64, f64)>) {
    let len = a.len();
    debug_assert_eq!(len, b.len());
    if len <= 1 {
        return;
    }
    let size = len.next_power_of_two();
    scratch.clear();
    scratch.extend(a.iter().copied().zip(b.iter().copied()));
    scratch.resize(size, (1.0, 0.0));

    #[inline]
    fn combine(first: (f64, f64), second: (f64, f64)) -> (f64, f64) {
        (second.0 * first.0, second.0 * first.1 + second.1)
    }

    let mut stride = 1;
    while stride < size {
        let mut i = 2 * stride - 1;
        while i < size {
            scratch[i] = combine(scratch[i - stride], scratch[i]);
            i += 2 * stride;
        }
        stride *= 2;
    }
    scratch[size - 1] = (1.0, 0.0);
    stride = size / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < size {
            let left = scratch[i - stride];
            scratch[i - stride] = scratch[i];
            scratch[i] = combine(scratch[i], left);
            i += 2 * stride;
        }
        stride /= 2;
    }
    // exclusive -> inclusive
    for i in 0..len {
        let (ea, eb) = combine(scratch[i], (a[i], b[i]));
        a[i] = ea;
        b[i] = eb;
    }
}

/// Same contract as [`scan_sequential`], evaluated lane by lane with
/// [`affine_prefix_scan`].
pub fn scan_parallel(ops: &DiscretizedOperators, x: &TokenSequence) -> Result<ScanCache> {
    let (hidden, output) = parallel_kernel(ops, x)?;
    Ok(ScanCache {
        input: x.clone(),
        ops: ops.clone(),
        hidden,
        output,
    })
}

pub fn parallel_kernel(ops: &DiscretizedOperators, x: &TokenSequence) -> Result<(Vec<f64>, TokenSequence)> {
    check_inputs(ops, x)?;
    let (len, dim, state) = (ops.len, ops.dim, ops.state);
    let mut hidden = vec![0.0; len * dim * state];
    let mut lane_a = vec![0.0; len];
    let mut lane_b = vec![0.0; len];
    let mut scratch = Vec::with_capacity(len.next_power_of_two());
    for d in 0..dim {
        for n in 0..state {
            for t in 0..len {
                let i = ops.idx(t, d, n);
                lane_a[t] = ops.a_bar[i];
                lane_b[t] = ops.b_bar[i] * x.get(t, d);
            }
            affine_prefix_scan(&mut lane_a, &mut lane_b, &mut scratch);
            for t in 0..len {
                hidden[ops.idx(t, d, n)] = lane_b[t];
            }
        }
    }
    let output = readout(ops, &hidden)?;
    Ok((hidden, output))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_scan_matches_loop_for_odd_lengths() {
        for len in 1..40 {
            let a0: Vec<f64> = (0..len).map(|i| 0.5 + 0.01 * i as f64).collect();
            let b0: Vec<f64> = (0..len).map(|i| (i as f64).sin()).collect();
            let (mut a, mut b) = (a0.clone(), b0.clone());
            affine_prefix_scan(&mut a, &mut b, &mut Vec::new());
            let (mut acc_a, mut h) = (1.0, 0.0);
            for i in 0..len {
                acc_a *= a0[i];
                h = a0[i] * h + b0[i];
                assert!((b[i] - h).abs() < 1e-12, "len {len} i {i}");
                assert!((a[i] - acc_a).abs() < 1e-12);
            }
        }
    }
}
