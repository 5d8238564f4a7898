use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::TokenSequence;

use super::discretize::DiscretizedOperators;

/// Default cap on the sequence length accepted by [`materialize_alpha`].
pub const DEFAULT_ALPHA_LIMIT: usize = 512;

/// The per-channel lower-triangular matrix with `y[:, d] = α[d] · x[:, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatrix {
    pub dim: usize,
    pub len: usize,
    /// `dim × len × len`, indexed `(d * len + i) * len + j`.
    pub values: Vec<f64>,
}

impl AlphaMatrix {
    #[inline]
    pub fn get(&self, d: usize, i: usize, j: usize) -> f64 {
        self.values[(d * self.len + i) * self.len + j]
    }

    /// Multiplies each channel's matrix into the matching input column.
    pub fn apply(&self, x: &TokenSequence) -> Result<TokenSequence> {
        if x.len() != self.len || x.dim() != self.dim {
            return Err(shape_err("alpha matrix and input disagree"));
        }
        Ok(TokenSequence::from_fn(self.len, self.dim, |i, d| {
            (0..=i).map(|j| self.get(d, i, j) * x.get(j, d)).sum()
        }))
    }
}

pub fn materialize_alpha(ops: &DiscretizedOperators) -> Result<AlphaMatrix> {
    materialize_alpha_with_limit(ops, DEFAULT_ALPHA_LIMIT)
}

/// `α[d, i, j] = C_i · (∏_{k=j+1}^{i} Ā_k ⊙ B̄_j)` for `j ≤ i`, zero above the
/// diagonal.
pub fn materialize_alpha_with_limit(ops: &DiscretizedOperators, limit: usize) -> Result<AlphaMatrix> {
    let (len, dim, state) = (ops.len, ops.dim, ops.state);
    if len > limit {
        return Err(Error::TooLong { len, limit });
    }
    let mut values = vec![0.0; dim * len * len];
    let mut carried = vec![0.0; state];
    for d in 0..dim {
        for j in 0..len {
            let start = ops.idx(j, d, 0);
            carried.copy_from_slice(&ops.b_bar[start..start + state]);
            for i in j..len {
                if i > j {
                    let ai = ops.idx(i, d, 0);
                    carried
                        .iter_mut()
                        .zip(&ops.a_bar[ai..ai + state])
                        .for_each(|(v, a)| *v *= a);
                }
                let c = ops.c.row(i);
                values[(d * len + i) * len + j] = c.iter().zip(&carried).map(|(a, b)| a * b).sum();
            }
        }
    }
    Ok(AlphaMatrix { dim, len, values })
}
