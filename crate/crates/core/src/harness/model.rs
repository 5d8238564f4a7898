use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::augment::{apply_plan, apply_plan_backward, plan_start, AugmentPolicy, BatchPlan};
use crate::error::{shape_err, Error, Result};
use crate::gap::LayerTaps;
use crate::math;
use crate::rng::normal;
use crate::ssm::{s6_backward, s6_forward, Discretization, ScanCache, SelectiveLayerParams};
use crate::tensor::TokenSequence;

/// Classifier weights start small so the untrained logits sit near uniform.
const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub depth: usize,
    pub dim: usize,
    pub state: usize,
    pub num_classes: usize,
    pub discretization: Discretization,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            dim: 8,
            state: 4,
            num_classes: 5,
            discretization: Discretization::Zoh,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.dim == 0 || self.state == 0 || self.num_classes < 2 {
            return Err(Error::InvalidArgument(
                "model needs depth, dim, state >= 1 and at least two classes".into(),
            ));
        }
        Ok(())
    }
}

/// Stacked selective layers with residual SiLU blocks, mean pooling over
/// tokens and an affine classifier:
///
/// `u = augment(h)`, `h' = h + silu(S6(u))`, `logits = mean_t(h_L) · W + b`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Model {
    pub config: ModelConfig,
    pub blocks: Vec<SelectiveLayerParams>,
    /// `dim × num_classes`, input-major.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

/// Gradients with the same layout as [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub blocks: Vec<SelectiveLayerParams>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.extend(b.blocks());
        }
        out.push(&self.w_out);
        out.push(&self.b_out);
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.scaled(c)).collect(),
            w_out: self.w_out.iter().map(|v| v * c).collect(),
            b_out: self.b_out.iter().map(|v| v * c).collect(),
        }
    }
}

/// Intermediates of one block for a whole batch.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub input: Vec<TokenSequence>,
    pub plan: BatchPlan,
    pub caches: Vec<ScanCache>,
}

/// Everything [`Model::backward`] needs from a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub blocks: Vec<BlockTrace>,
    pub pooled: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    len: usize,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.depth)
            .map(|_| SelectiveLayerParams::init(config.dim, config.state, rng))
            .collect();
        let std = HEAD_INIT_SCALE / math::sqrt(config.dim as f64);
        let w_out = (0..config.dim * config.num_classes)
            .map(|_| std * normal(rng))
            .collect();
        Ok(Self {
            config,
            blocks,
            w_out,
            b_out: vec![0.0; config.num_classes],
        })
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            w_out: vec![0.0; self.w_out.len()],
            b_out: vec![0.0; self.b_out.len()],
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in self.blocks.iter_mut() {
            out.extend(b.blocks_mut().into_iter().map(|v| v.as_mut_slice()));
        }
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.extend(b.blocks());
        }
        out.push(&self.w_out);
        out.push(&self.b_out);
        out
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        if self.blocks.len() != c.depth
            || self.w_out.len() != c.dim * c.num_classes
            || self.b_out.len() != c.num_classes
        {
            return Err(shape_err("model weights do not match the configuration"));
        }
        for b in &self.blocks {
            b.validate()?;
            if b.dim != c.dim || b.state != c.state {
                return Err(shape_err("block shape differs from the configuration"));
            }
        }
        Ok(())
    }

    fn classify(&self, pooled: &[f64]) -> Vec<f64> {
        let k = self.config.num_classes;
        let mut logits = self.b_out.clone();
        for (i, &p) in pooled.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(&self.w_out[i * k..(i + 1) * k]) {
                *l += p * w;
            }
        }
        logits
    }

    /// Batch forward pass. The augmentation plan of every block is drawn
    /// from `rng` against that block's own parameters and current input.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        batch: &[TokenSequence],
        policy: &AugmentPolicy,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        self.forward_impl(batch, |b, h| plan_start(h, &self.blocks[b], policy, rng))
    }

    /// Forward pass replaying previously recorded augmentation plans.
    pub fn forward_with_plans(&self, batch: &[TokenSequence], plans: &[BatchPlan]) -> Result<ForwardTrace> {
        if plans.len() != self.blocks.len() {
            return Err(shape_err("need one plan per block"));
        }
        self.forward_impl(batch, |b, _| Ok(plans[b].clone()))
    }

    fn forward_impl(
        &self,
        batch: &[TokenSequence],
        mut planner: impl FnMut(usize, &[TokenSequence]) -> Result<BatchPlan>,
    ) -> Result<ForwardTrace> {
        let first = batch.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let len = first.len();
        if batch.iter().any(|x| x.len() != len || x.dim() != self.config.dim) {
            return Err(shape_err("batch samples must share the model's token shape"));
        }
        let mut h: Vec<TokenSequence> = batch.to_vec();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, params) in self.blocks.iter().enumerate() {
            let plan = planner(b, &h)?;
            let u = apply_plan(&h, &plan)?;
            let caches = u
                .iter()
                .map(|x| s6_forward(x, params, self.config.discretization))
                .collect::<Result<Vec<_>>>()?;
            // the residual path carries the unaugmented stream
            let next = h
                .iter()
                .zip(&caches)
                .map(|(x, c)| {
                    let mut o = x.clone();
                    for (v, y) in o.as_mut_slice().iter_mut().zip(c.output.as_slice()) {
                        *v += math::silu(*y);
                    }
                    o
                })
                .collect();
            blocks.push(BlockTrace {
                input: core::mem::replace(&mut h, next),
                plan,
                caches,
            });
        }
        let pooled: Vec<Vec<f64>> = h
            .iter()
            .map(|x| {
                let mut p = vec![0.0; x.dim()];
                for t in 0..x.len() {
                    for (a, v) in p.iter_mut().zip(x.row(t)) {
                        *a += v;
                    }
                }
                p.iter_mut().for_each(|a| *a /= len as f64);
                p
            })
            .collect();
        let logits = pooled.iter().map(|p| self.classify(p)).collect();
        Ok(ForwardTrace {
            blocks,
            pooled,
            logits,
            len,
        })
    }

    /// Inference logits for one sequence (augmentation disabled).
    pub fn logits(&self, x: &TokenSequence) -> Result<Vec<f64>> {
        let trace = self.forward_impl(core::slice::from_ref(x), |_, h| Ok(BatchPlan::identity(h.len())))?;
        Ok(trace.logits.into_iter().next().unwrap())
    }

    pub fn predict(&self, x: &TokenSequence) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Reverse sweep through classifier, pooling, residual blocks, the
    /// selective layers and the augmentation's statistics mixing. Returns
    /// parameter gradients and input gradients.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[Vec<f64>]) -> Result<(ModelGrads, Vec<TokenSequence>)> {
        let n = trace.logits.len();
        let k = self.config.num_classes;
        let dim = self.config.dim;
        if dlogits.len() != n || dlogits.iter().any(|g| g.len() != k) {
            return Err(shape_err("logit gradients do not match the forward pass"));
        }
        if trace.blocks.len() != self.blocks.len() {
            return Err(shape_err("trace was produced by a model of different depth"));
        }
        let mut grads = self.zero_grads();
        let inv_len = 1.0 / trace.len as f64;
        let mut dh: Vec<TokenSequence> = Vec::with_capacity(n);
        for (pooled, g) in trace.pooled.iter().zip(dlogits) {
            for (bo, gv) in grads.b_out.iter_mut().zip(g) {
                *bo += gv;
            }
            let mut dpool = vec![0.0; dim];
            for i in 0..dim {
                let wrow = &self.w_out[i * k..(i + 1) * k];
                let dwrow = &mut grads.w_out[i * k..(i + 1) * k];
                for c in 0..k {
                    dwrow[c] += pooled[i] * g[c];
                    dpool[i] += wrow[c] * g[c];
                }
            }
            dh.push(TokenSequence::from_fn(trace.len, dim, |_, d| dpool[d] * inv_len));
        }
        for (b, bt) in trace.blocks.iter().enumerate().rev() {
            let params = &self.blocks[b];
            let mut du = Vec::with_capacity(n);
            for (cache, g) in bt.caches.iter().zip(&dh) {
                let dy = TokenSequence::from_fn(trace.len, dim, |t, d| {
                    g.get(t, d) * math::silu_grad(cache.output.get(t, d))
                });
                let lg = s6_backward(cache, params, &dy)?;
                grads.blocks[b].accumulate(&lg.params);
                du.push(lg.dx);
            }
            let through_branch = apply_plan_backward(&bt.input, &bt.plan, &du)?;
            for (g, extra) in dh.iter_mut().zip(&through_branch) {
                for (a, v) in g.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                    *a += v;
                }
            }
        }
        Ok((grads, dh))
    }
}

impl LayerTaps for Model {
    fn layer_count(&self) -> usize {
        self.blocks.len()
    }

    fn tap(&self, x: &TokenSequence, layer: usize) -> Result<ScanCache> {
        if layer >= self.blocks.len() {
            return Err(Error::InvalidArgument(alloc::format!("layer {layer} out of range")));
        }
        let mut h = x.clone();
        for (b, params) in self.blocks.iter().enumerate() {
            let cache = s6_forward(&h, params, self.config.discretization)?;
            if b == layer {
                return Ok(cache);
            }
            for (v, y) in h.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
                *v += math::silu(*y);
            }
        }
        unreachable!()
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of one sample and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| math::exp(l - m)).collect();
    let z: f64 = exps.iter().sum();
    let loss = libm::log(z) + m - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}
