//! Benchmark generator, model forward/backward and the training loop.

use start_core::augment::{AugmentPolicy, AugmentVariant};
use start_core::check::{block_relative_error, central_difference};
use start_core::gap::{to_mmd, FeatureBank, GammaMode};
use start_core::harness::*;
use start_core::math::silu;
use start_core::rng::{normal, seeded};
use start_core::ssm::{materialize_alpha, s6_forward};
use start_core::TokenSequence;

fn tiny_lodo(variant: AugmentVariant, epochs: usize) -> LodoConfig {
    let synth = SynthDGConfig {
        num_domains: 3,
        num_classes: 3,
        len: 8,
        dim: 4,
        samples_per_domain_per_class: 8,
        ..SynthDGConfig::default()
    };
    let model = ModelConfig { depth: 2, dim: 4, state: 2, num_classes: 3, ..ModelConfig::default() };
    let train = TrainConfig {
        epochs,
        batch_size: 16,
        lr0: 1e-2,
        policy: AugmentPolicy::with_variant(variant),
        ..TrainConfig::default()
    };
    LodoConfig { synth, model, train, seeds: vec![0, 1], gap_samples_per_class: 3, ..LodoConfig::default() }
}

fn bank(d: &DomainData) -> FeatureBank {
    FeatureBank::new(format!("{}", d.domain), d.samples.clone()).unwrap()
}

#[test]
fn dataset_is_deterministic_and_balanced() {
    let cfg = SynthDGConfig::default();
    let a = synth_dataset(&cfg).unwrap();
    assert_eq!(a, synth_dataset(&cfg).unwrap());
    assert_eq!(a.len(), 4);
    for d in &a {
        assert_eq!(d.samples.len(), 5 * 40);
        for c in 0..5 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 40);
        }
    }
    let other = synth_dataset(&SynthDGConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn default_domains_differ_in_distribution() {
    let data = synth_dataset(&SynthDGConfig::default()).unwrap();
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            assert!(to_mmd(&bank(&data[i]), &bank(&data[j]), GammaMode::Median).unwrap() > 0.0);
        }
    }
}

#[test]
fn degenerate_style_gives_identical_domains() {
    let cfg = SynthDGConfig { domain_style_strength: 0.0, noise_std: 0.0, ..SynthDGConfig::default() };
    let data = synth_dataset(&cfg).unwrap();
    for d in &data[1..] {
        assert_eq!(d.samples, data[0].samples);
        assert!(to_mmd(&bank(&data[0]), &bank(d), GammaMode::Median).unwrap() <= 1e-12);
    }
}

#[test]
fn too_few_domains_rejected() {
    let cfg = SynthDGConfig { num_domains: 2, ..SynthDGConfig::default() };
    assert!(synth_dataset(&cfg).is_err());
}

fn tiny_model(seed: u64, depth: usize) -> Model {
    let cfg = ModelConfig { depth, dim: 3, state: 2, num_classes: 3, ..ModelConfig::default() };
    Model::new(cfg, &mut seeded(seed)).unwrap()
}

fn tiny_batch(n: usize, seed: u64) -> Vec<TokenSequence> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| TokenSequence::from_fn(5, 3, |_, _| (1.0 + i as f64 * 0.3) * normal(&mut rng) + i as f64 * 0.2))
        .collect()
}

/// Straight-line forward pass through the attention form of each layer.
fn oracle_logits(m: &Model, x: &TokenSequence) -> Vec<f64> {
    let mut h = x.clone();
    for p in &m.blocks {
        let ops = s6_forward(&h, p, m.config.discretization).unwrap().ops;
        let y = materialize_alpha(&ops).unwrap().apply(&h).unwrap();
        h = TokenSequence::from_fn(h.len(), h.dim(), |t, d| h.get(t, d) + silu(y.get(t, d)));
    }
    let k = m.config.num_classes;
    (0..k)
        .map(|c| {
            let mut z = m.b_out[c];
            for d in 0..h.dim() {
                let pooled: f64 = (0..h.len()).map(|t| h.get(t, d)).sum::<f64>() / h.len() as f64;
                z += pooled * m.w_out[d * k + c];
            }
            z
        })
        .collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let m = tiny_model(5, 2);
    for x in tiny_batch(3, 6) {
        let got = m.logits(&x).unwrap();
        let want = oracle_logits(&m, &x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn zero_classifier_gives_zero_logits() {
    let mut m = tiny_model(2, 1);
    m.w_out.iter_mut().for_each(|w| *w = 0.0);
    assert_eq!(m.logits(&tiny_batch(1, 1)[0]).unwrap(), vec![0.0; 3]);
}

#[test]
fn inference_ignores_the_policy() {
    let m = tiny_model(4, 2);
    let batch = tiny_batch(4, 4);
    let base = m
        .forward_batch(&batch, &AugmentPolicy::default().inference(), &mut seeded(0))
        .unwrap();
    for v in AugmentVariant::ALL {
        let policy = AugmentPolicy { apply_prob: 1.0, ..AugmentPolicy::with_variant(v) }.inference();
        let t = m.forward_batch(&batch, &policy, &mut seeded(1)).unwrap();
        assert_eq!(t.logits, base.logits);
    }
}

fn batch_loss(m: &Model, batch: &[TokenSequence], labels: &[usize], trace: &ForwardTrace) -> f64 {
    let plans: Vec<_> = trace.blocks.iter().map(|b| b.plan.clone()).collect();
    let t = m.forward_with_plans(batch, &plans).unwrap();
    t.logits.iter().zip(labels).map(|(l, &y)| softmax_cross_entropy(l, y).0).sum()
}

#[test]
fn model_gradient_matches_finite_differences_seed_23() {
    let policy = AugmentPolicy { apply_prob: 1.0, p_token: 0.6, ..AugmentPolicy::with_variant(AugmentVariant::StartM) };
    let batch = tiny_batch(3, 23);
    let labels = [0, 2, 1];
    let model = tiny_model(23, 2);
    let trace = model.forward_batch(&batch, &policy, &mut seeded(23)).unwrap();
    assert!(trace.blocks.iter().all(|b| b.plan.fired() == 3));
    let dlogits: Vec<Vec<f64>> = trace.logits.iter().zip(&labels).map(|(l, &y)| softmax_cross_entropy(l, y).1).collect();
    let (grads, dinputs) = model.backward(&trace, &dlogits).unwrap();

    let mut worst: f64 = 0.0;
    for (bi, analytic) in grads.slices().iter().enumerate() {
        let base: Vec<f64> = model.param_slices()[bi].to_vec();
        let numeric = central_difference(
            |v| {
                let mut m = model.clone();
                m.param_slices_mut()[bi].copy_from_slice(v);
                batch_loss(&m, &batch, &labels, &trace)
            },
            &base,
            1e-6,
        );
        worst = worst.max(block_relative_error(analytic, &numeric, 1e-8));
    }
    for (i, x) in batch.iter().enumerate() {
        let numeric = central_difference(
            |v| {
                let mut b = batch.clone();
                b[i] = TokenSequence::new(5, 3, v.to_vec()).unwrap();
                batch_loss(&model, &b, &labels, &trace)
            },
            x.as_slice(),
            1e-6,
        );
        worst = worst.max(block_relative_error(dinputs[i].as_slice(), &numeric, 1e-8));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn backward_is_linear_in_dlogits() {
    let model = tiny_model(7, 2);
    let batch = tiny_batch(2, 7);
    let policy = AugmentPolicy { apply_prob: 1.0, ..AugmentPolicy::with_variant(AugmentVariant::StartX) };
    let trace = model.forward_batch(&batch, &policy, &mut seeded(7)).unwrap();
    let zero = vec![vec![0.0; 3]; 2];
    let (g0, d0) = model.backward(&trace, &zero).unwrap();
    assert!(g0.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    assert!(d0.iter().all(|x| x.as_slice().iter().all(|&v| v == 0.0)));
    let dl = vec![vec![0.3, -0.1, 0.5], vec![-1.0, 0.2, 0.0]];
    let dl2: Vec<Vec<f64>> = dl.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
    let (g1, _) = model.backward(&trace, &dl).unwrap();
    let (g2, _) = model.backward(&trace, &dl2).unwrap();
    for (a, b) in g1.slices().iter().zip(g2.slices()) {
        for (x, y) in a.iter().zip(b) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn untrained_model_is_at_chance() {
    let cfg = LodoConfig { seeds: vec![0, 1, 2], gap_samples_per_class: 0, ..LodoConfig::default() };
    let cfg = LodoConfig { train: TrainConfig { epochs: 0, ..cfg.train }, ..cfg };
    let report = run_lodo(&cfg, |_| {}).unwrap();
    let n = 200.0;
    let p = 0.2f64;
    let sigma = (p * (1.0 - p) / n).sqrt();
    // per-seed averages over four held-out domains
    assert!((report.overall.mean - p).abs() <= 3.0 * sigma, "{}", report.overall.mean);
}

#[test]
fn lodo_is_deterministic() {
    let cfg = tiny_lodo(AugmentVariant::StartM, 3);
    let a = run_lodo(&cfg, |_| {}).unwrap();
    let b = run_lodo(&cfg, |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.jobs.len(), 6);
    assert!(a.jobs.iter().all(|j| j.records.len() == 4 && j.gaps.is_some()));
}

#[test]
fn full_sequence_trajectory_equals_start_m_at_full_fraction() {
    let full = tiny_lodo(AugmentVariant::FullSequence, 4);
    let mut start = full.with_variant(AugmentVariant::StartM);
    start.train.policy.p_token = 1.0;
    let world = SynthWorld::new(full.synth).unwrap();
    let data = world.sample(TRAIN_SPLIT);
    let sources: Vec<&DomainData> = data[1..].iter().collect();
    let (ma, ra) = train_model(&full.model, &full.train, &sources, &data[0], 3, |_| {}).unwrap();
    let (mb, rb) = train_model(&start.model, &start.train, &sources, &data[0], 3, |_| {}).unwrap();
    assert_eq!(ma, mb);
    for (a, b) in ra.iter().zip(&rb) {
        assert_eq!((a.epoch, a.train_loss, a.target_acc), (b.epoch, b.train_loss, b.target_acc));
    }
}

#[test]
fn training_loss_decreases_for_every_variant() {
    for v in AugmentVariant::ALL {
        let cfg = tiny_lodo(v, 6);
        let world = SynthWorld::new(cfg.synth).unwrap();
        let data = world.sample(TRAIN_SPLIT);
        let sources: Vec<&DomainData> = data[1..].iter().collect();
        let (_, rec) = train_model(&cfg.model, &cfg.train, &sources, &data[0], 0, |_| {}).unwrap();
        assert!(rec.last().unwrap().train_loss < rec[1].train_loss, "{}", v.name());
    }
}

#[test]
fn mismatched_model_and_benchmark_rejected() {
    let mut cfg = LodoConfig::default();
    cfg.model.dim = 4;
    assert!(run_lodo(&cfg, |_| {}).is_err());
}
