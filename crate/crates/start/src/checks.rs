//! Invariant checks shared by `start verify` and the acceptance suite.
//! Every check compares the implementation against an independent
//! computation and reports the worst deviation it saw.

use rand::Rng;
use start_core::augment::{
    apply_plan, apply_start, apply_start_recorded, top_p_mask, AugmentPolicy, AugmentVariant, BatchPlan,
    SamplePlan,
};
use start_core::check::{block_relative_error, central_difference};
use start_core::gap::{accumulation_trace, mmd2};
use start_core::harness::{
    softmax_cross_entropy, train_model, DomainData, LodoConfig, Model, ModelConfig, SynthDGConfig, SynthWorld,
    TrainConfig, TRAIN_SPLIT,
};
use start_core::rng::{normal, seeded, uniform};
use start_core::ssm::{
    materialize_alpha, s6_backward, s6_forward, s6_forward_with, zoh_factor_direct, zoh_factor_taylor,
    Discretization, ScanKernel, SelectiveLayerParams, BLOCK_NAMES,
};
use start_core::tensor::max_rel_diff;
use start_core::TokenSequence;

/// Test hooks that deliberately corrupt a computation so the suite can
/// demonstrate that it notices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    /// Multiplies every parallel-scan output.
    pub scan_scale: f64,
}

impl Default for Fault {
    fn default() -> Self {
        Self { scan_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    /// Worst observed deviation (or count, for exact checks).
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn within(measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    fn exact(failures: usize, detail: impl Into<String>) -> Self {
        Self {
            passed: failures == 0,
            measured: failures as f64,
            tolerance: 0.0,
            detail: detail.into(),
        }
    }
}

fn random_seq<R: Rng>(len: usize, dim: usize, scale: f64, rng: &mut R) -> TokenSequence {
    TokenSequence::from_fn(len, dim, |_, _| scale * normal(rng))
}

fn range<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Sequential scan, α-matrix product and parallel scan on random layers
/// with `L ≤ 64`, `D ≤ 8`, `N ≤ 8`, both discretizations.
pub fn scan_equivalence(instances: usize, seed: u64, fault: &Fault) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (len, dim, state) = (range(&mut rng, 1, 64), range(&mut rng, 1, 8), range(&mut rng, 1, 8));
        let p = SelectiveLayerParams::random(dim, state, 0.6, &mut rng);
        let x = random_seq(len, dim, 1.0, &mut rng);
        for mode in [Discretization::Zoh, Discretization::Euler] {
            let seq = s6_forward_with(&x, &p, mode, ScanKernel::Sequential).unwrap();
            let par = s6_forward_with(&x, &p, mode, ScanKernel::Parallel).unwrap();
            let par_out: Vec<f64> = par.output.as_slice().iter().map(|v| v * fault.scan_scale).collect();
            let via_alpha = materialize_alpha(&seq.ops).unwrap().apply(&x).unwrap();
            let floor = 1e-300;
            worst = worst
                .max(max_rel_diff(&par_out, seq.output.as_slice(), floor))
                .max(max_rel_diff(via_alpha.as_slice(), seq.output.as_slice(), floor));
        }
    }
    CheckOutcome::within(worst, 1e-10, format!("{instances} instances, max relative difference {worst:.2e}"))
}

/// The α-matrix refuses sequences longer than its guard.
pub fn alpha_guard() -> CheckOutcome {
    let mut rng = seeded(5);
    let p = SelectiveLayerParams::random(1, 1, 0.5, &mut rng);
    let x = random_seq(513, 1, 1.0, &mut rng);
    let c = s6_forward(&x, &p, Discretization::Zoh).unwrap();
    let refused = materialize_alpha(&c.ops).is_err();
    CheckOutcome::exact(usize::from(!refused), "L = 513 rejected by the default guard")
}

/// A = -1, Δ = 1: Ā = e^{-1}, B̄ = 1 - e^{-1}.
pub fn discretize_scalar_case() -> CheckOutcome {
    let mut p = SelectiveLayerParams::zeros(1, 1);
    p.a_log = vec![0.0];
    // softplus(b) = 1
    p.b_delta = vec![(1.0f64.exp() - 1.0).ln()];
    p.b_b = vec![1.0];
    p.b_c = vec![1.0];
    let x = TokenSequence::new(1, 1, vec![1.0]).unwrap();
    let ops = s6_forward(&x, &p, Discretization::Zoh).unwrap().ops;
    let e = (-1.0f64).exp();
    let err = (ops.a_bar[0] - e).abs().max((ops.b_bar[0] - (1.0 - e)).abs());
    CheckOutcome::within(err, 1e-12, format!("|Ā - e^-1|, |B̄ - (1 - e^-1)| ≤ {err:.1e}"))
}

/// Series and direct forms of (e^z - 1)/z agree at |z| = 1e-5.
pub fn taylor_branch() -> CheckOutcome {
    let err = [1e-5, -1e-5]
        .iter()
        .map(|&z| (zoh_factor_taylor(z) - zoh_factor_direct(z)).abs())
        .fold(0.0, f64::max);
    CheckOutcome::within(err, 1e-9, format!("series vs direct at |z| = 1e-5: {err:.1e}"))
}

fn s6_loss(x: &TokenSequence, p: &SelectiveLayerParams, dy: &TokenSequence, mode: Discretization) -> f64 {
    let y = s6_forward(x, p, mode).unwrap().output;
    y.as_slice().iter().zip(dy.as_slice()).map(|(a, b)| a * b).sum()
}

/// Layer gradients (input and all seven parameter blocks) against central
/// differences of `⟨y, dy⟩`.
pub fn s6_gradients(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (len, dim, state) = (range(&mut rng, 2, 8), range(&mut rng, 1, 3), range(&mut rng, 1, 3));
        let p = SelectiveLayerParams::random(dim, state, 0.6, &mut rng);
        let x = random_seq(len, dim, 1.0, &mut rng);
        let dy = random_seq(len, dim, 1.0, &mut rng);
        let mode = if i % 2 == 0 { Discretization::Zoh } else { Discretization::Euler };
        let g = s6_backward(&s6_forward(&x, &p, mode).unwrap(), &p, &dy).unwrap();
        let fd = central_difference(
            |v| s6_loss(&TokenSequence::new(len, dim, v.to_vec()).unwrap(), &p, &dy, mode),
            x.as_slice(),
            1e-5,
        );
        worst = worst.max(block_relative_error(g.dx.as_slice(), &fd, 1e-10));
        for b in 0..BLOCK_NAMES.len() {
            let fd = central_difference(
                |v| {
                    let mut q = p.clone();
                    q.blocks_mut()[b].copy_from_slice(v);
                    s6_loss(&x, &q, &dy, mode)
                },
                p.blocks()[b],
                1e-5,
            );
            worst = worst.max(block_relative_error(g.params.blocks()[b], &fd, 1e-10));
        }
    }
    CheckOutcome::within(worst, 1e-5, format!("{instances} layers, worst block relative error {worst:.2e}"))
}

/// Full model loss (with an active augmentation plan replayed verbatim)
/// against central differences in every parameter block and the inputs.
pub fn model_gradients(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let cfg = ModelConfig {
            depth: range(&mut rng, 1, 2),
            dim: range(&mut rng, 2, 3),
            state: 2,
            num_classes: 3,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, &mut rng).unwrap();
        let len = range(&mut rng, 3, 6);
        let batch: Vec<TokenSequence> = (0..3)
            .map(|k| random_seq(len, cfg.dim, 1.0 + 0.5 * k as f64, &mut rng))
            .collect();
        let labels: Vec<usize> = (0..3).map(|_| range(&mut rng, 0, 2)).collect();
        let variant = AugmentVariant::ALL[i % AugmentVariant::ALL.len()];
        let policy = AugmentPolicy { apply_prob: 0.8, p_token: 0.5, ..AugmentPolicy::with_variant(variant) };
        let trace = model.forward_batch(&batch, &policy, &mut rng).unwrap();
        let plans: Vec<BatchPlan> = trace.blocks.iter().map(|b| b.plan.clone()).collect();
        let loss = |m: &Model, b: &[TokenSequence]| -> f64 {
            let t = m.forward_with_plans(b, &plans).unwrap();
            t.logits.iter().zip(&labels).map(|(l, &y)| softmax_cross_entropy(l, y).0).sum()
        };
        let dlogits: Vec<Vec<f64>> = trace
            .logits
            .iter()
            .zip(&labels)
            .map(|(l, &y)| softmax_cross_entropy(l, y).1)
            .collect();
        let (grads, dinputs) = model.backward(&trace, &dlogits).unwrap();
        for (bi, analytic) in grads.slices().iter().enumerate() {
            let base = model.param_slices()[bi].to_vec();
            let fd = central_difference(
                |v| {
                    let mut m = model.clone();
                    m.param_slices_mut()[bi].copy_from_slice(v);
                    loss(&m, &batch)
                },
                &base,
                1e-6,
            );
            worst = worst.max(block_relative_error(analytic, &fd, 1e-8));
        }
        for (k, x) in batch.iter().enumerate() {
            let fd = central_difference(
                |v| {
                    let mut b = batch.clone();
                    b[k] = TokenSequence::new(len, cfg.dim, v.to_vec()).unwrap();
                    loss(&model, &b)
                },
                x.as_slice(),
                1e-6,
            );
            worst = worst.max(block_relative_error(dinputs[k].as_slice(), &fd, 1e-8));
        }
    }
    CheckOutcome::within(worst, 1e-5, format!("{instances} models, worst block relative error {worst:.2e}"))
}

fn random_batch<R: Rng>(rng: &mut R) -> (Vec<TokenSequence>, SelectiveLayerParams) {
    let (n, len, dim) = (range(rng, 2, 6), range(rng, 1, 24), range(rng, 1, 6));
    let batch = (0..n)
        .map(|_| {
            let (s, m) = (0.5 + 2.0 * uniform(rng), normal(rng));
            TokenSequence::from_fn(len, dim, |_, _| s * normal(rng) + m)
        })
        .collect();
    (batch, SelectiveLayerParams::random(dim, 2, 0.7, rng))
}

/// With `training = false` every variant returns its input bit for bit.
pub fn inference_identity(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut failures = 0;
    for i in 0..instances {
        let (batch, p) = random_batch(&mut rng);
        let v = AugmentVariant::ALL[i % AugmentVariant::ALL.len()];
        let policy = AugmentPolicy { apply_prob: 1.0, ..AugmentPolicy::with_variant(v) }.inference();
        if apply_start(&batch, &p, &policy, &mut rng).unwrap() != batch {
            failures += 1;
        }
    }
    CheckOutcome::exact(failures, format!("{instances} batches unchanged at inference"))
}

/// Masks select exactly `round(p·L)` tokens and never a lower score over a higher one.
pub fn mask_cardinality(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut failures = 0;
    for _ in 0..instances {
        let len = range(&mut rng, 1, 100);
        // coarse scores so that ties occur
        let scores: Vec<f64> = (0..len).map(|_| (4.0 * uniform(&mut rng)).floor()).collect();
        let p = uniform(&mut rng);
        let m = top_p_mask(&scores, p).unwrap();
        let want = ((p * len as f64).round() as usize).min(len);
        let mut ok = m.count() == want;
        for a in 0..len {
            for b in 0..len {
                // a selected token never loses to an unselected one, ties resolved by index
                if m.mask[a] && !m.mask[b] && (scores[a] < scores[b] || (scores[a] == scores[b] && a > b)) {
                    ok = false;
                }
            }
        }
        failures += usize::from(!ok);
    }
    CheckOutcome::exact(failures, format!("{instances} masks with exact cardinality and tie order"))
}

/// Mixing with ε = 1 reapplies a sample's own statistics and must return
/// the input bit for bit.
pub fn eps_one_identity(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut failures = 0;
    for _ in 0..instances {
        let (batch, _) = random_batch(&mut rng);
        let n = batch.len();
        let plan = BatchPlan {
            samples: (0..n)
                .map(|i| {
                    Some(SamplePlan {
                        partner: (i + 1) % n,
                        eps: 1.0,
                        mask: vec![true; batch[i].len()],
                    })
                })
                .collect(),
        };
        if apply_plan(&batch, &plan).unwrap() != batch {
            failures += 1;
        }
    }
    CheckOutcome::exact(failures, format!("{instances} batches unchanged"))
}

fn tiny_benchmark() -> (LodoConfig, Vec<DomainData>) {
    let synth = SynthDGConfig {
        num_domains: 3,
        num_classes: 3,
        len: 8,
        dim: 4,
        samples_per_domain_per_class: 8,
        ..SynthDGConfig::default()
    };
    let cfg = LodoConfig {
        synth,
        model: ModelConfig { depth: 2, dim: 4, state: 2, num_classes: 3, ..ModelConfig::default() },
        train: TrainConfig { epochs: 3, batch_size: 16, lr0: 1e-2, ..TrainConfig::default() },
        ..LodoConfig::default()
    };
    let data = SynthWorld::new(synth).unwrap().sample(TRAIN_SPLIT);
    (cfg, data)
}

/// `full-seq` training and `start-m` with `p_token = 1` produce the same
/// plans, losses, accuracies and final weights under equal seeds.
pub fn full_sequence_degeneracy() -> CheckOutcome {
    let (cfg, data) = tiny_benchmark();
    let sources: Vec<&DomainData> = data[1..].iter().collect();
    let mut failures = 0;
    for seed in 0..2 {
        let mut full = cfg.train;
        full.policy = AugmentPolicy { apply_prob: 0.7, ..AugmentPolicy::with_variant(AugmentVariant::FullSequence) };
        let mut start = full;
        start.policy.variant = AugmentVariant::StartM;
        start.policy.p_token = 1.0;
        let (ma, ra) = train_model(&cfg.model, &full, &sources, &data[0], seed, |_| {}).unwrap();
        let (mb, rb) = train_model(&cfg.model, &start, &sources, &data[0], seed, |_| {}).unwrap();
        let same_log = ra
            .iter()
            .zip(&rb)
            .all(|(a, b)| a.train_loss.to_bits() == b.train_loss.to_bits() && a.target_acc == b.target_acc);
        failures += usize::from(ma != mb || !same_log);
        // a single batch, checked plan by plan
        let (batch, p) = random_batch(&mut seeded(seed));
        let a = apply_start_recorded(&batch, &p, &full.policy, &mut seeded(seed)).unwrap();
        let b = apply_start_recorded(&batch, &p, &start.policy, &mut seeded(seed)).unwrap();
        failures += usize::from(a != b);
    }
    CheckOutcome::exact(failures, "trajectories identical over 2 seeds")
}

/// MMD² is zero on identical sample sets.
pub fn mmd_identical(seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = range(&mut rng, 1, 20);
        let dim = range(&mut rng, 1, 6);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| normal(&mut rng)).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        worst = worst.max(mmd2(&refs, &refs, 0.5 + uniform(&mut rng)).unwrap());
    }
    CheckOutcome::within(worst, 1e-12, format!("largest value {worst:.1e}"))
}

/// Singletons: MMD² = 2 - 2 exp(-d²/γ).
pub fn mmd_singleton(seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dim = range(&mut rng, 1, 5);
        let a: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..dim).map(|_| 2.0 * normal(&mut rng)).collect();
        let gamma = 0.1 + 5.0 * uniform(&mut rng);
        let d2: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum();
        let got = mmd2(&[&a[..]], &[&b[..]], gamma).unwrap();
        worst = worst.max((got - (2.0 - 2.0 * (-d2 / gamma).exp())).abs());
    }
    CheckOutcome::within(worst, 1e-12, format!("max deviation from closed form {worst:.1e}"))
}

/// Two Gaussian clouds: MMD² strictly increases over mean separations
/// {0, 1, 2, 4} for every seed.
pub fn mmd_monotone(seeds: u64) -> CheckOutcome {
    let mut failures = 0;
    for seed in 0..seeds {
        let values: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&sep| {
                let mut rx = seeded(1000 + seed);
                let mut ry = seeded(2000 + seed);
                let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![normal(&mut rx), normal(&mut rx)]).collect();
                let ys: Vec<Vec<f64>> = (0..40).map(|_| vec![normal(&mut ry) + sep, normal(&mut ry)]).collect();
                let (a, b): (Vec<&[f64]>, Vec<&[f64]>) = (
                    xs.iter().map(|v| v.as_slice()).collect(),
                    ys.iter().map(|v| v.as_slice()).collect(),
                );
                mmd2(&a, &b, 4.0).unwrap()
            })
            .collect();
        failures += usize::from(!values.windows(2).all(|w| w[1] > w[0]));
    }
    CheckOutcome::exact(failures, format!("{seeds} seeds strictly increasing"))
}

/// The per-token exact gap of the accumulation trace equals the gap of two
/// independent forward passes.
pub fn accumulation_exact(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (len, dim, state) = (range(&mut rng, 1, 32), range(&mut rng, 1, 4), range(&mut rng, 1, 4));
        let p = SelectiveLayerParams::random(dim, state, 0.6, &mut rng);
        let xs = random_seq(len, dim, 1.0, &mut rng);
        let xt = random_seq(len, dim, 1.5, &mut rng);
        let mode = Discretization::Zoh;
        let ys = s6_forward(&xs, &p, mode).unwrap().output;
        let yt = s6_forward(&xt, &p, mode).unwrap().output;
        let scale = ys.as_slice().iter().chain(yt.as_slice()).fold(1.0f64, |m, v| m.max(v.abs()));
        for tr in accumulation_trace(&xs, &xt, &p, mode).unwrap() {
            for d in 0..dim {
                let want = (ys.get(tr.token_index, d) - yt.get(tr.token_index, d)).abs();
                worst = worst.max((tr.exact_gap[d] - want).abs() / scale);
            }
        }
    }
    CheckOutcome::within(worst, 1e-12, format!("{instances} pairs, max deviation {worst:.1e}"))
}

/// With softplus(Δ)·|A| ≤ 1e-3 the first-order decomposition reconstructs
/// the signed gap of every token.
pub fn accumulation_small_step(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    let mut max_step = 0.0f64;
    for _ in 0..instances {
        let (len, dim, state) = (range(&mut rng, 2, 32), range(&mut rng, 1, 4), range(&mut rng, 1, 4));
        let mut p = SelectiveLayerParams::random(dim, state, 0.6, &mut rng);
        p.w_delta.iter_mut().for_each(|w| *w *= 1e-2);
        p.b_delta.iter_mut().for_each(|b| *b = -10.0);
        let xs = random_seq(len, dim, 1.0, &mut rng);
        let xt = random_seq(len, dim, 2.0, &mut rng);
        let ops = s6_forward(&xs, &p, Discretization::Zoh).unwrap().ops;
        let a_max = p.decay().iter().fold(0.0f64, |m, a| m.max(a.abs()));
        max_step = ops.delta.as_slice().iter().fold(max_step, |m, d| m.max(d * a_max));
        for tr in accumulation_trace(&xs, &xt, &p, Discretization::Zoh).unwrap() {
            worst = worst.max(tr.max_relative_error());
        }
    }
    let passed = worst <= 1e-4 && max_step <= 1e-3;
    CheckOutcome {
        passed,
        measured: worst,
        tolerance: 1e-4,
        detail: format!("{instances} pairs, max ΔA {max_step:.1e}, worst relative residual {worst:.1e}"),
    }
}

/// One named entry of the verification suite.
pub struct Check {
    pub group: &'static str,
    pub name: &'static str,
    pub run: fn(&Fault) -> CheckOutcome,
}

pub fn suite() -> Vec<Check> {
    vec![
        Check { group: "scan", name: "three-way scan equivalence", run: |f| scan_equivalence(200, 1, f) },
        Check { group: "scan", name: "alpha-matrix length guard", run: |_| alpha_guard() },
        Check { group: "discretize", name: "scalar ZOH case", run: |_| discretize_scalar_case() },
        Check { group: "discretize", name: "series branch continuity", run: |_| taylor_branch() },
        Check { group: "grad", name: "layer gradients vs finite differences", run: |_| s6_gradients(20, 2) },
        Check { group: "grad", name: "model gradients vs finite differences", run: |_| model_gradients(20, 3) },
        Check { group: "augment", name: "inference is identity", run: |_| inference_identity(100, 4) },
        Check { group: "augment", name: "mask cardinality", run: |_| mask_cardinality(200, 5) },
        Check { group: "augment", name: "eps = 1 is identity", run: |_| eps_one_identity(100, 6) },
        Check { group: "augment", name: "full-seq equals start-m at p = 1", run: |_| full_sequence_degeneracy() },
        Check { group: "mmd", name: "zero on identical sets", run: |_| mmd_identical(7) },
        Check { group: "mmd", name: "singleton closed form", run: |_| mmd_singleton(8) },
        Check { group: "mmd", name: "monotone in separation", run: |_| mmd_monotone(10) },
        Check { group: "accumulation", name: "exact gap vs two passes", run: |_| accumulation_exact(50, 9) },
        Check { group: "accumulation", name: "small-step reconstruction", run: |_| accumulation_small_step(20, 10) },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_fault_is_detected() {
        assert!(scan_equivalence(5, 1, &Fault::default()).passed);
        assert!(!scan_equivalence(5, 1, &Fault { scan_scale: 1.0 + 1e-6 }).passed);
    }

    #[test]
    fn suite_names_are_unique() {
        let s = suite();
        for (i, a) in s.iter().enumerate() {
            assert!(s[i + 1..].iter().all(|b| b.name != a.name));
        }
    }
}
