use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::ssm::{materialize_alpha, s6_forward, Discretization, SelectiveLayerParams};
use crate::tensor::TokenSequence;

/// How the output gap of one token splits into the carried history, the
/// step-size difference and the new token's own response. All vectors are
/// per channel.
///
/// For token `k ≥ 1`, with `h` the state after token `k-1`:
///
/// * `carry = (C_k·h^S − C_k·h^T) + Δ^S_k · (C_k·(A⊙h^S) − C_k·(A⊙h^T))`,
///   the `(I + Δ̃A)β` term with β read out through the current `C_k`;
/// * `term_delta = (Δ^S_k − Δ^T_k) · C^T_k·(A⊙h^T)`;
/// * `term_cdbx = C^S_k·B̄^S_k x^S_k − C^T_k·B̄^T_k x^T_k`.
///
/// Replacing `exp(ΔA)` by `1 + ΔA` makes `carry + term_delta + term_cdbx`
/// approximate the signed gap; `approx_error` is the residual of that step.
/// `readout_drift` measures the further step of reading β with `C_{k-1}`
/// instead of `C_k`. Token 0 has no history and an exact decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulationTrace {
    pub token_index: usize,
    /// `|y^S_k − y^T_k|` from the unrolled attention form.
    pub exact_gap: Vec<f64>,
    pub carry: Vec<f64>,
    pub term_delta: Vec<f64>,
    pub term_cdbx: Vec<f64>,
    pub approx_error: Vec<f64>,
    /// Magnitude scale for relative errors: `max(|y^S_k|, |y^T_k|, |C_k·h^S|, |C_k·h^T|)`.
    pub scale: Vec<f64>,
    pub readout_drift: Vec<f64>,
}

impl AccumulationTrace {
    pub fn reconstructed(&self) -> Vec<f64> {
        self.carry
            .iter()
            .zip(&self.term_delta)
            .zip(&self.term_cdbx)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }

    /// Largest `approx_error / scale` over channels (zero where the scale is zero).
    pub fn max_relative_error(&self) -> f64 {
        self.approx_error
            .iter()
            .zip(&self.scale)
            .map(|(&e, &s)| if s > 0.0 { e / s } else { e })
            .fold(0.0, f64::max)
    }
}

/// Token-by-token decomposition of the output gap between two inputs
/// passed through the same layer.
pub fn accumulation_trace(
    x_s: &TokenSequence,
    x_t: &TokenSequence,
    p: &SelectiveLayerParams,
    mode: Discretization,
) -> Result<Vec<AccumulationTrace>> {
    if !x_s.same_shape(x_t) {
        return Err(shape_err("source and target sequences differ in shape"));
    }
    let cs = s6_forward(x_s, p, mode)?;
    let ct = s6_forward(x_t, p, mode)?;
    let alpha_s = materialize_alpha(&cs.ops)?;
    let alpha_t = materialize_alpha(&ct.ops)?;
    let (len, dim, state) = (x_s.len(), p.dim, p.state);
    let a = p.decay();

    // y_k = Σ_{j≤k} α_kj x_j, independently of the scan
    let unrolled = |alpha: &crate::ssm::AlphaMatrix, x: &TokenSequence, k: usize, d: usize| -> f64 {
        (0..=k).map(|j| alpha.get(d, k, j) * x.get(j, d)).sum()
    };

    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        let mut tr = AccumulationTrace {
            token_index: k,
            exact_gap: Vec::with_capacity(dim),
            carry: Vec::with_capacity(dim),
            term_delta: Vec::with_capacity(dim),
            term_cdbx: Vec::with_capacity(dim),
            approx_error: Vec::with_capacity(dim),
            scale: Vec::with_capacity(dim),
            readout_drift: Vec::with_capacity(dim),
        };
        let (c_s, c_t) = (cs.ops.c.row(k), ct.ops.c.row(k));
        for d in 0..dim {
            let ys = unrolled(&alpha_s, x_s, k, d);
            let yt = unrolled(&alpha_t, x_t, k, d);
            let signed = ys - yt;
            let cdbx = alpha_s.get(d, k, k) * x_s.get(k, d) - alpha_t.get(d, k, k) * x_t.get(k, d);
            let (carry, term_delta, drift, us, ut) = if k == 0 {
                (0.0, 0.0, 0.0, 0.0, 0.0)
            } else {
                let (hs, ht) = (cs.state(k - 1, d), ct.state(k - 1, d));
                let a_d = &a[d * state..(d + 1) * state];
                let dot = |c: &[f64], h: &[f64]| c.iter().zip(h).map(|(x, y)| x * y).sum::<f64>();
                let dot_a = |c: &[f64], h: &[f64]| {
                    (0..state).map(|n| c[n] * a_d[n] * h[n]).sum::<f64>()
                };
                let (us, ut) = (dot(c_s, hs), dot(c_t, ht));
                let (vs, vt) = (dot_a(c_s, hs), dot_a(c_t, ht));
                let (ds, dt) = (cs.ops.delta.get(k, d), ct.ops.delta.get(k, d));
                let carry = (us - ut) + ds * (vs - vt);
                let term_delta = (ds - dt) * vt;
                let prev_gap = cs.output.get(k - 1, d) - ct.output.get(k - 1, d);
                (carry, term_delta, ((us - ut) - prev_gap).abs(), us, ut)
            };
            tr.exact_gap.push(signed.abs());
            tr.carry.push(carry);
            tr.term_delta.push(term_delta);
            tr.term_cdbx.push(cdbx);
            tr.approx_error.push((signed - (carry + term_delta + cdbx)).abs());
            tr.scale.push(ys.abs().max(yt.abs()).max(us.abs()).max(ut.abs()));
            tr.readout_drift.push(drift);
        }
        out.push(tr);
    }
    Ok(out)
}
