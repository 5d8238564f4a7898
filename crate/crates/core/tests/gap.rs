//! Kernel MMD, token-level MMD, gap reports and the accumulation trace.

use start_core::gap::*;
use start_core::harness::{Model, ModelConfig};
use start_core::rng::{normal, seeded};
use start_core::ssm::{s6_forward, Discretization, SelectiveLayerParams};
use start_core::TokenSequence;

fn cloud(n: usize, dim: usize, offset: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| normal(&mut rng) + offset).collect())
        .collect()
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

/// Straight-line biased MMD² used as an oracle.
fn naive_mmd2(xs: &[Vec<f64>], ys: &[Vec<f64>], gamma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / gamma).exp()
    };
    let mean = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        let mut s = 0.0;
        for a in p {
            for b in q {
                s += k(a, b);
            }
        }
        s / (p.len() * q.len()) as f64
    };
    (mean(xs, xs) + mean(ys, ys) - 2.0 * mean(xs, ys)).max(0.0)
}

fn bank(id: &str, n: usize, len: usize, dim: usize, seed: u64, shift: impl Fn(usize) -> f64) -> FeatureBank {
    let mut rng = seeded(seed);
    let samples = (0..n)
        .map(|_| TokenSequence::from_fn(len, dim, |_, d| normal(&mut rng) + shift(d)))
        .collect();
    FeatureBank::new(id, samples).unwrap()
}

#[test]
fn kernel_matches_direct_norm() {
    let v = cloud(2, 6, 0.0, 4);
    let d2: f64 = v[0].iter().zip(&v[1]).map(|(a, b)| (a - b) * (a - b)).sum();
    assert!((gaussian_kernel(&v[0], &v[1], 2.5).unwrap() - (-d2 / 2.5).exp()).abs() <= 1e-12);
    assert!((gaussian_kernel(&[0.0, 0.0], &[1.0, 1.0], 2.0).unwrap() - (-1.0f64).exp()).abs() <= 1e-15);
}

#[test]
fn mmd_matches_naive_oracle() {
    let xs = cloud(13, 3, 0.0, 1);
    let ys = cloud(9, 3, 0.7, 2);
    let got = mmd2(&refs(&xs), &refs(&ys), 1.7).unwrap();
    assert!((got - naive_mmd2(&xs, &ys, 1.7)).abs() <= 1e-12);
}

#[test]
fn mmd_singleton_closed_form() {
    for (a, b, gamma) in [(0.0, 3.0, 2.0), (1.0, -1.0, 0.5), (2.0, 2.5, 10.0)] {
        let d2 = (a - b) * (a - b);
        let got = mmd2(&[&[a][..]], &[&[b][..]], gamma).unwrap();
        assert!((got - (2.0 - 2.0 * (-d2 / gamma as f64).exp())).abs() <= 1e-12);
    }
}

#[test]
fn mmd_grows_with_separation_over_ten_seeds() {
    for seed in 0..10 {
        let values: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&sep| {
                let xs = cloud(40, 2, 0.0, 100 + seed);
                let ys = cloud(40, 2, sep, 200 + seed);
                mmd2(&refs(&xs), &refs(&ys), 4.0).unwrap()
            })
            .collect();
        assert!(values.windows(2).all(|w| w[1] > w[0]), "seed {seed}: {values:?}");
    }
}

#[test]
fn to_mmd_identical_banks_vanish() {
    let s = bank("s", 10, 5, 3, 1, |_| 0.0);
    assert!(to_mmd(&s, &s.clone(), GammaMode::Median).unwrap() <= 1e-12);
}

#[test]
fn to_mmd_single_token_reduces_to_mmd() {
    let s = bank("s", 12, 1, 3, 1, |_| 0.0);
    let t = bank("t", 8, 1, 3, 2, |_| 0.5);
    let detailed = to_mmd_detailed(&s, &t, GammaMode::Median).unwrap();
    let xs: Vec<&[f64]> = s.samples.iter().map(|x| x.row(0)).collect();
    let ys: Vec<&[f64]> = t.samples.iter().map(|x| x.row(0)).collect();
    assert!((detailed.value - mmd2(&xs, &ys, detailed.gamma).unwrap()).abs() <= 1e-12);
    // the median bandwidth is the median pooled squared distance
    let pooled: Vec<&[f64]> = xs.iter().chain(&ys).copied().collect();
    let mut d2 = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d2.push(squared_distance(pooled[i], pooled[j]));
        }
    }
    assert_eq!(detailed.gamma, median(d2).unwrap());
}

#[test]
fn to_mmd_half_channel_shift_exceeds_quarter() {
    let gamma = GammaMode::Fixed(16.0);
    let s = bank("s", 30, 4, 8, 5, |_| 0.0);
    let half = bank("t", 30, 4, 8, 6, |d| if d < 4 { 1.5 } else { 0.0 });
    let quarter = bank("t", 30, 4, 8, 6, |d| if d < 2 { 1.5 } else { 0.0 });
    let (h, q) = (to_mmd(&s, &half, gamma).unwrap(), to_mmd(&s, &quarter, gamma).unwrap());
    assert!(q > 0.0 && h > q, "half {h} quarter {q}");
}

#[test]
fn to_mmd_ignores_sample_order() {
    let s = bank("s", 9, 3, 2, 7, |_| 0.0);
    let t = bank("t", 7, 3, 2, 8, |_| 1.0);
    let mut rev = t.clone();
    rev.samples.reverse();
    let a = to_mmd(&s, &t, GammaMode::Median).unwrap();
    let b = to_mmd(&s, &rev, GammaMode::Median).unwrap();
    assert!((a - b).abs() <= 1e-12);
}

#[test]
fn kappa_is_the_largest_pair() {
    let banks = vec![
        bank("a", 10, 3, 2, 1, |_| 0.0),
        bank("b", 10, 3, 2, 2, |_| 0.2),
        bank("c", 10, 3, 2, 3, |_| 3.0),
    ];
    let g = GammaMode::Fixed(2.0);
    let pairs = [(0, 1), (0, 2), (1, 2)].map(|(i, j)| to_mmd(&banks[i], &banks[j], g).unwrap());
    let kappa = estimate_kappa_s(&banks, g).unwrap();
    assert_eq!(kappa, pairs.iter().copied().fold(0.0, f64::max));
    assert!(pairs[1].max(pairs[2]) == kappa);
    assert_eq!(estimate_kappa_s(&banks[..2], g).unwrap(), pairs[0]);
    assert!(estimate_kappa_s(&[banks[0].clone(), banks[0].clone()], g).unwrap() <= 1e-12);
    assert!(matches!(
        estimate_kappa_s(&banks[..1], g),
        Err(start_core::Error::TooFewDomains(1))
    ));
}

fn styled_bank(id: &str, seed: u64, scale: f64, shift: f64) -> FeatureBank {
    let mut rng = seeded(seed);
    let samples = (0..12)
        .map(|_| TokenSequence::from_fn(6, 3, |_, _| scale * normal(&mut rng) + shift))
        .collect();
    FeatureBank::new(id, samples).unwrap()
}

#[test]
fn report_vanishes_for_identical_domains_and_sees_style() {
    let cfg = ModelConfig { depth: 2, dim: 3, state: 2, num_classes: 2, ..ModelConfig::default() };
    let model = Model::new(cfg, &mut seeded(3)).unwrap();
    let same = [styled_bank("a", 1, 1.0, 0.0), styled_bank("b", 1, 1.0, 0.0)];
    let r = matrix_domain_gaps(&model, &same, 1, GammaMode::Median).unwrap();
    for q in Quantity::ALL {
        assert!(r.max(q) <= 1e-12, "{q:?}");
    }
    let styled = [styled_bank("a", 1, 1.0, 0.0), styled_bank("b", 2, 2.0, 1.0), styled_bank("c", 3, 0.5, -1.0)];
    let r = matrix_domain_gaps(&model, &styled, 0, GammaMode::Median).unwrap();
    assert_eq!(r.pairs.len(), 3 * 4);
    assert!(r.gap_features > 0.0);
    assert!(matrix_domain_gaps(&model, &styled, 2, GammaMode::Median).is_err());
}

fn seq(len: usize, dim: usize, seed: u64, scale: f64) -> TokenSequence {
    let mut rng = seeded(seed);
    TokenSequence::from_fn(len, dim, |_, _| scale * normal(&mut rng))
}

#[test]
fn accumulation_identical_inputs_give_zero() {
    let p = SelectiveLayerParams::random(3, 2, 0.5, &mut seeded(1));
    let x = seq(7, 3, 2, 1.0);
    for tr in accumulation_trace(&x, &x, &p, Discretization::Zoh).unwrap() {
        for v in [&tr.exact_gap, &tr.carry, &tr.term_delta, &tr.term_cdbx, &tr.approx_error] {
            assert!(v.iter().all(|&e| e == 0.0));
        }
    }
}

#[test]
fn accumulation_exact_gap_matches_two_pass() {
    for seed in 0..5 {
        let p = SelectiveLayerParams::random(3, 4, 0.6, &mut seeded(seed));
        let (xs, xt) = (seq(16, 3, 10 + seed, 1.0), seq(16, 3, 20 + seed, 1.5));
        for mode in [Discretization::Zoh, Discretization::Euler] {
            let ys = s6_forward(&xs, &p, mode).unwrap().output;
            let yt = s6_forward(&xt, &p, mode).unwrap().output;
            for tr in accumulation_trace(&xs, &xt, &p, mode).unwrap() {
                for d in 0..3 {
                    let want = (ys.get(tr.token_index, d) - yt.get(tr.token_index, d)).abs();
                    let scale = ys.get(tr.token_index, d).abs().max(yt.get(tr.token_index, d).abs()).max(1.0);
                    assert!((tr.exact_gap[d] - want).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}

#[test]
fn accumulation_first_token_has_no_carry() {
    let p = SelectiveLayerParams::random(2, 3, 0.6, &mut seeded(9));
    let (xs, xt) = (seq(5, 2, 1, 1.0), seq(5, 2, 2, 1.0));
    let mode = Discretization::Zoh;
    let (cs, ct) = (s6_forward(&xs, &p, mode).unwrap(), s6_forward(&xt, &p, mode).unwrap());
    let tr = &accumulation_trace(&xs, &xt, &p, mode).unwrap()[0];
    for d in 0..2 {
        let resp = |c: &start_core::ssm::ScanCache, x: &TokenSequence| -> f64 {
            (0..3).map(|n| c.ops.c.get(0, n) * c.ops.b_bar[c.ops.idx(0, d, n)] * x.get(0, d)).sum()
        };
        let want = (resp(&cs, &xs) - resp(&ct, &xt)).abs();
        assert!((tr.exact_gap[d] - want).abs() <= 1e-12);
        assert_eq!(tr.carry[d], 0.0);
        assert_eq!(tr.term_delta[d], 0.0);
        assert!(tr.approx_error[d] <= 1e-12);
    }
}

#[test]
fn accumulation_small_step_regime_reconstructs() {
    for seed in 0..5 {
        let mut p = SelectiveLayerParams::random(3, 4, 0.6, &mut seeded(seed));
        p.w_delta.iter_mut().for_each(|w| *w *= 1e-2);
        p.b_delta.iter_mut().for_each(|b| *b = -12.0);
        let (xs, xt) = (seq(24, 3, 40 + seed, 1.0), seq(24, 3, 50 + seed, 2.0));
        let cs = s6_forward(&xs, &p, Discretization::Zoh).unwrap();
        let max_step = cs
            .ops
            .delta
            .as_slice()
            .iter()
            .map(|d| d * p.decay().iter().fold(0.0f64, |m, a| m.max(a.abs())))
            .fold(0.0f64, f64::max);
        assert!(max_step <= 1e-3);
        for tr in accumulation_trace(&xs, &xt, &p, Discretization::Zoh).unwrap() {
            assert!(tr.max_relative_error() <= 1e-4, "token {}", tr.token_index);
        }
    }
}

#[test]
fn accumulation_rejects_shape_mismatch() {
    let p = SelectiveLayerParams::random(2, 2, 0.6, &mut seeded(1));
    assert!(accumulation_trace(&seq(4, 2, 1, 1.0), &seq(5, 2, 1, 1.0), &p, Discretization::Zoh).is_err());
}
