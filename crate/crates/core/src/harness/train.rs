use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::augment::{AugmentPolicy, AugmentVariant};
use crate::error::{Error, Result};
use crate::gap::{matrix_domain_gaps, DomainGapReport, FeatureBank, GammaMode};
use crate::rng::{split, SeededRng};
use crate::tensor::TokenSequence;

use super::data::{DomainData, SynthDGConfig, SynthWorld};
use super::model::{softmax_cross_entropy, Model, ModelConfig};
use super::optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub adamw: AdamWConfig,
    pub policy: AugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr0: 5e-4,
            lr_min: 0.0,
            adamw: AdamWConfig::default(),
            policy: AugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adamw;
        if self.batch_size == 0
            || !(self.lr0 > 0.0)
            || !(self.lr_min >= 0.0)
            || !(a.beta1 > 0.0 && a.beta1 < 1.0)
            || !(a.beta2 > 0.0 && a.beta2 < 1.0)
            || !(a.eps > 0.0)
            || !(a.weight_decay >= 0.0)
        {
            return Err(Error::InvalidArgument("invalid optimisation settings".into()));
        }
        self.policy.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub seed: u64,
    pub held_out_domain: usize,
    pub variant: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub target_acc: f64,
}

pub fn accuracy(model: &Model, data: &DomainData) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in data.samples.iter().zip(&data.labels) {
        if model.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.samples.len().max(1) as f64)
}

fn mean_loss(model: &Model, xs: &[TokenSequence], ys: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        total += softmax_cross_entropy(&model.logits(x)?, y).0;
    }
    Ok(total / xs.len().max(1) as f64)
}

const INIT_STREAM: u64 = 101;
const SHUFFLE_STREAM: u64 = 102;
const AUGMENT_STREAM: u64 = 103;

/// Splits `n` shuffled indices into batches; a trailing singleton batch is
/// folded into its predecessor so every batch can supply a style partner.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Trains a fresh model on `train` and logs loss and target accuracy per
/// epoch. Epoch 0 is the untrained model (clean training loss).
pub fn train_model(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &[&DomainData],
    target: &DomainData,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mut model = Model::new(*model_cfg, &mut split(seed, INIT_STREAM))?;
    let xs: Vec<TokenSequence> = train.iter().flat_map(|d| d.samples.iter().cloned()).collect();
    let ys: Vec<usize> = train.iter().flat_map(|d| d.labels.iter().copied()).collect();
    if xs.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let held_out = target.domain;
    let variant = String::from(cfg.policy.variant.name());
    let mut shuffle_rng: SeededRng = split(seed, SHUFFLE_STREAM);
    let mut aug_rng: SeededRng = split(seed, AUGMENT_STREAM);
    let mut opt = AdamWState::new(&model.block_sizes());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let steps_per_epoch = batches(&order, cfg.batch_size).len();
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let mut push = |rec: EpochRecord, log: &mut Vec<EpochRecord>| {
        on_epoch(&rec);
        log.push(rec);
    };
    push(
        EpochRecord {
            seed,
            held_out_domain: held_out,
            variant: variant.clone(),
            epoch: 0,
            train_loss: mean_loss(&model, &xs, &ys)?,
            target_acc: accuracy(&model, target)?,
        },
        &mut log,
    );

    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for idx in batches(&order, cfg.batch_size) {
            let batch: Vec<TokenSequence> = idx.iter().map(|&i| xs[i].clone()).collect();
            let trace = model.forward_batch(&batch, &cfg.policy, &mut aug_rng)?;
            let n = idx.len() as f64;
            let mut dlogits = Vec::with_capacity(idx.len());
            for (logits, &i) in trace.logits.iter().zip(idx) {
                let (l, g) = softmax_cross_entropy(logits, ys[i]);
                epoch_loss += l;
                dlogits.push(g.into_iter().map(|v| v / n).collect());
            }
            let (grads, _) = model.backward(&trace, &dlogits)?;
            let lr = cosine_lr(step, total_steps, cfg.lr0, cfg.lr_min)?;
            let gs = grads.slices();
            adamw_step(&mut model.param_slices_mut(), &gs, &mut opt, lr, &cfg.adamw)?;
            step += 1;
        }
        push(
            EpochRecord {
                seed,
                held_out_domain: held_out,
                variant: variant.clone(),
                epoch,
                train_loss: epoch_loss / xs.len() as f64,
                target_acc: accuracy(&model, target)?,
            },
            &mut log,
        );
    }
    Ok((model, log))
}

/// Everything needed for a leave-one-domain-out experiment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LodoConfig {
    pub synth: SynthDGConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Layer whose Δ, B, C and output are compared across source domains;
    /// `None` means the last block.
    pub gap_layer: Option<usize>,
    /// Held-out samples per class and source domain used for the gap report.
    pub gap_samples_per_class: usize,
    pub gap_gamma: GammaMode,
}

impl Default for LodoConfig {
    fn default() -> Self {
        Self {
            synth: SynthDGConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            gap_layer: None,
            gap_samples_per_class: 10,
            gap_gamma: GammaMode::Median,
        }
    }
}

impl LodoConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.synth.dim != self.model.dim || self.synth.num_classes != self.model.num_classes {
            return Err(Error::InvalidArgument(
                "model dim/classes must match the benchmark".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if let Some(l) = self.gap_layer {
            if l >= self.model.depth {
                return Err(Error::InvalidArgument(format!(
                    "gap layer {l} out of range for depth {}",
                    self.model.depth
                )));
            }
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: AugmentVariant) -> Self {
        let mut c = self.clone();
        c.train.policy.variant = variant;
        c
    }

    pub fn num_jobs(&self) -> usize {
        self.seeds.len() * self.synth.num_domains
    }

    /// `(seed, held_out_domain)` of job `i`.
    pub fn job(&self, i: usize) -> (u64, usize) {
        let n = self.synth.num_domains;
        (self.seeds[i / n], i % n)
    }
}

/// Result of training with one held-out domain and one seed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JobOutcome {
    pub seed: u64,
    pub held_out_domain: usize,
    pub target_acc: f64,
    pub records: Vec<EpochRecord>,
    pub gaps: Option<DomainGapReport>,
}

/// Balanced subset of a domain: the first `per_class` samples of each class.
/// The first `per_class` samples of each class, labelled `domain{i}`.
pub fn gap_bank(data: &DomainData, per_class: usize) -> FeatureBank {
    let mut counts = alloc::collections::BTreeMap::new();
    let samples = data
        .samples
        .iter()
        .zip(&data.labels)
        .filter(|(_, &y)| {
            let c = counts.entry(y).or_insert(0usize);
            *c += 1;
            *c <= per_class
        })
        .map(|(x, _)| x.clone())
        .collect();
    FeatureBank {
        domain_id: format!("domain{}", data.domain),
        samples,
    }
}

/// Trains with `held_out` excluded, then reports target accuracy and the
/// token-level gaps between source domains on a fresh sample split.
pub fn lodo_job(
    cfg: &LodoConfig,
    world: &SynthWorld,
    train_split: &[DomainData],
    gap_split: &[DomainData],
    seed: u64,
    held_out: usize,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, JobOutcome)> {
    let _ = world;
    let sources: Vec<&DomainData> = train_split.iter().filter(|d| d.domain != held_out).collect();
    let target = train_split
        .iter()
        .find(|d| d.domain == held_out)
        .ok_or_else(|| Error::InvalidArgument(format!("no domain {held_out}")))?;
    let (model, records) = train_model(&cfg.model, &cfg.train, &sources, target, seed, on_epoch)?;
    let gaps = if cfg.gap_samples_per_class > 0 {
        let banks: Vec<FeatureBank> = gap_split
            .iter()
            .filter(|d| d.domain != held_out)
            .map(|d| gap_bank(d, cfg.gap_samples_per_class))
            .collect();
        let layer = cfg.gap_layer.unwrap_or(cfg.model.depth - 1);
        Some(matrix_domain_gaps(&model, &banks, layer, cfg.gap_gamma)?)
    } else {
        None
    };
    let target_acc = records.last().map(|r| r.target_acc).unwrap_or(0.0);
    Ok((
        model,
        JobOutcome {
            seed,
            held_out_domain: held_out,
            target_acc,
            records,
            gaps,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n−1) standard deviation; zero spread for one value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            crate::math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DomainSummary {
    pub domain: usize,
    pub accuracy: MeanStd,
    pub per_seed: Vec<f64>,
}

/// Per-held-out-domain accuracy table plus the raw job outcomes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LodoReport {
    pub variant: String,
    pub domains: Vec<DomainSummary>,
    /// Mean over seeds of the per-seed average over held-out domains.
    pub overall: MeanStd,
    pub jobs: Vec<JobOutcome>,
}

impl LodoReport {
    pub fn from_jobs(cfg: &LodoConfig, mut jobs: Vec<JobOutcome>) -> Self {
        jobs.sort_by_key(|j| (j.seed, j.held_out_domain));
        let domains = (0..cfg.synth.num_domains)
            .map(|d| {
                let per_seed: Vec<f64> = cfg
                    .seeds
                    .iter()
                    .filter_map(|&s| jobs.iter().find(|j| j.seed == s && j.held_out_domain == d))
                    .map(|j| j.target_acc)
                    .collect();
                DomainSummary {
                    domain: d,
                    accuracy: MeanStd::of(&per_seed),
                    per_seed,
                }
            })
            .collect();
        let per_seed_avg: Vec<f64> = cfg
            .seeds
            .iter()
            .map(|&s| {
                let accs: Vec<f64> = jobs.iter().filter(|j| j.seed == s).map(|j| j.target_acc).collect();
                accs.iter().sum::<f64>() / accs.len().max(1) as f64
            })
            .collect();
        Self {
            variant: String::from(cfg.train.policy.variant.name()),
            domains,
            overall: MeanStd::of(&per_seed_avg),
            jobs,
        }
    }

    /// Mean over jobs of the pair-averaged gap for `q`.
    pub fn mean_gap(&self, q: crate::gap::Quantity) -> Option<f64> {
        let vals: Vec<f64> = self.jobs.iter().filter_map(|j| j.gaps.as_ref()).map(|g| g.mean(q)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Split id of the training samples and of the held-out gap samples.
pub const TRAIN_SPLIT: u64 = 0;
pub const GAP_SPLIT: u64 = 1;

/// Leave-one-domain-out over every domain and seed, single-threaded.
pub fn run_lodo(cfg: &LodoConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<LodoReport> {
    cfg.validate()?;
    let world = SynthWorld::new(cfg.synth)?;
    let train_split = world.sample(TRAIN_SPLIT);
    let gap_split = world.sample(GAP_SPLIT);
    let mut jobs = Vec::with_capacity(cfg.num_jobs());
    for i in 0..cfg.num_jobs() {
        let (seed, held_out) = cfg.job(i);
        let (_, outcome) = lodo_job(cfg, &world, &train_split, &gap_split, seed, held_out, &mut on_epoch)?;
        jobs.push(outcome);
    }
    Ok(LodoReport::from_jobs(cfg, jobs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_tail_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 1.0).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }
}
