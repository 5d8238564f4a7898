use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// A row-major `len × dim` matrix of activations, one row per token.
///
/// The same type carries any token-aligned matrix (Δ, B, C, outputs), so
/// `dim` is simply the row width.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenSequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TokenSequence {
    /// Builds a sequence, rejecting empty shapes and non-finite entries.
    pub fn new(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(shape_err("token sequences need len >= 1 and dim >= 1"));
        }
        if data.len() != len * dim {
            return Err(shape_err(alloc::format!(
                "expected {} values for {len}x{dim}, got {}",
                len * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "input",
                token: i / dim,
            });
        }
        Ok(Self { len, dim, data })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        assert!(len > 0 && dim > 0, "empty token sequence");
        Self {
            len,
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_fn(len: usize, dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut s = Self::zeros(len, dim);
        for t in 0..len {
            for d in 0..dim {
                s.data[t * dim + d] = f(t, d);
            }
        }
        s
    }

    /// Wraps raw storage without the finiteness check. Used internally for
    /// intermediates whose finiteness is tracked elsewhere.
    pub(crate) fn from_raw(len: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), len * dim);
        Self { len, dim, data }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.dim + d]
    }

    #[inline]
    pub fn set(&mut self, t: usize, d: usize, v: f64) {
        self.data[t * self.dim + d] = v;
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.len, self.dim, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.len == other.len && self.dim == other.dim
    }

    pub(crate) fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite {
                what,
                token: i / self.dim,
            }),
            None => Ok(()),
        }
    }
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `max|a - b| / max(max|b|, floor)`.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(floor, f64::max);
    max_abs_diff(a, b) / scale
}
