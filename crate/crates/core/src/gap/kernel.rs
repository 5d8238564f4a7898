use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math::{self, KahanSum};

/// Bandwidth selection for the Gaussian kernel `exp(-||a - b||² / γ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GammaMode {
    /// Median pairwise squared distance of the pooled samples.
    Median,
    Fixed(f64),
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::Median
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("gamma must be positive, got {gamma}")));
    }
    if a.len() != b.len() {
        return Err(shape_err("kernel arguments differ in length"));
    }
    Ok(math::exp(-squared_distance(a, b) / gamma))
}

/// Pairwise squared distances of `X ∪ Y`, row-major `n × n` with `n = |X| + |Y|`.
pub(crate) struct PooledDistances {
    pub nx: usize,
    pub n: usize,
    pub d2: Vec<f64>,
}

impl PooledDistances {
    pub fn new(xs: &[&[f64]], ys: &[&[f64]]) -> Self {
        let pooled: Vec<&[f64]> = xs.iter().chain(ys).copied().collect();
        let n = pooled.len();
        let mut d2 = alloc::vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = squared_distance(pooled[i], pooled[j]);
                d2[i * n + j] = v;
                d2[j * n + i] = v;
            }
        }
        Self { nx: xs.len(), n, d2 }
    }

    /// Off-diagonal upper-triangle distances.
    pub fn pairs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| self.d2[i * self.n + j]))
    }

    /// Biased (V-statistic) MMD², clamped at zero.
    pub fn mmd2(&self, gamma: f64) -> f64 {
        let (n, nx) = (self.n, self.nx);
        let ny = n - nx;
        let k = |i: usize, j: usize| math::exp(-self.d2[i * n + j] / gamma);
        let (mut kxx, mut kyy, mut kxy) = (KahanSum::new(), KahanSum::new(), KahanSum::new());
        for i in 0..n {
            for j in 0..n {
                match (i < nx, j < nx) {
                    (true, true) => kxx.add(k(i, j)),
                    (false, false) => kyy.add(k(i, j)),
                    (true, false) => kxy.add(k(i, j)),
                    (false, true) => {}
                }
            }
        }
        let v = kxx.value() / (nx * nx) as f64 + kyy.value() / (ny * ny) as f64
            - 2.0 * kxy.value() / (nx * ny) as f64;
        v.max(0.0)
    }
}

/// Median of the values, or `None` for an empty input.
pub fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    let (_, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if values.len() % 2 == 1 {
        Some(hi)
    } else {
        let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lo + hi))
    }
}

/// Resolves a bandwidth; a degenerate median (all points equal) falls back to 1.
pub(crate) fn resolve_gamma<'a>(mode: GammaMode, tables: impl Iterator<Item = &'a PooledDistances>) -> Result<f64> {
    match mode {
        GammaMode::Fixed(g) if g > 0.0 && g.is_finite() => Ok(g),
        GammaMode::Fixed(g) => Err(Error::InvalidArgument(alloc::format!("gamma must be positive, got {g}"))),
        GammaMode::Median => {
            let all: Vec<f64> = tables.flat_map(|t| t.pairs()).collect();
            Ok(match median(all) {
                Some(m) if m > 0.0 => m,
                _ => 1.0,
            })
        }
    }
}

fn check_set(set: &[&[f64]], what: &str) -> Result<usize> {
    let first = set
        .first()
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("{what} sample set is empty")))?;
    if set.iter().any(|v| v.len() != first.len()) {
        return Err(shape_err(alloc::format!("{what} vectors differ in length")));
    }
    Ok(first.len())
}

/// Biased kernel MMD² between two sample sets with a fixed bandwidth.
pub fn mmd2(xs: &[&[f64]], ys: &[&[f64]], gamma: f64) -> Result<f64> {
    let dx = check_set(xs, "first")?;
    let dy = check_set(ys, "second")?;
    if dx != dy {
        return Err(shape_err("sample sets live in different dimensions"));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("gamma must be positive, got {gamma}")));
    }
    Ok(PooledDistances::new(xs, ys).mmd2(gamma))
}
