//! The full classifier: one encoder branch per lead, lead fusion, and a
//! per-lead head feeding a shared classifier.

mod config;
mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{FusionMode, LayerReadout, ModelConfig};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::numerics::ops::{self, BatchNormMode, BatchStats, RunningStats};
use crate::numerics::{Backend, Eager, ParamId, ParamStore, Tensor};
use crate::ssm::{bidirectional_block, uniform, BiBlockParams, DirectionCombine};
use crate::tokenize::{window_starts, ClsPolicy};

/// SE bottleneck width; 12 leads squeezed to one unit.
pub const SE_HIDDEN: usize = 1;
const TOKEN_INIT: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct LeadBranch {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub cls_start: ParamId,
    pub cls_end: Option<ParamId>,
    pub pos: ParamId,
    pub blocks: Vec<BiBlockParams>,
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub se_w1: ParamId,
    pub se_b1: ParamId,
    pub se_w2: ParamId,
    pub se_b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub lead_w: Vec<ParamId>,
    pub lead_b: Vec<ParamId>,
    pub bn_gain: ParamId,
    pub bn_bias: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics, which are returned for the caller
    /// to fold into the running averages.
    Train,
    Eval,
}

/// Result of a forward pass.
pub struct Forward<V> {
    /// `[batch, classes]`
    pub logits: V,
    pub batch_stats: Option<BatchStats>,
    /// `[batch, leads]` excitation weights when fusion is on.
    pub se_weights: Option<V>,
}

#[derive(Clone, Debug)]
pub struct S2m2Ecg {
    config: ModelConfig,
    store: ParamStore,
    branches: Vec<LeadBranch>,
    fusion: Option<FusionParams>,
    head: HeadParams,
    running: RunningStats,
}

fn fan_in(rng: &mut impl Rng, fan: usize, shape: Vec<usize>) -> Tensor {
    uniform(rng, shape, 1.0 / (fan as f64).sqrt())
}

impl LeadBranch {
    fn init(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (p, d) = (cfg.patch_len, cfg.dim);
        let block_cfg = cfg.block();
        Self {
            embed_w: store.add(format!("{prefix}.embed_w"), fan_in(rng, p, vec![p, d])),
            embed_b: store.add(format!("{prefix}.embed_b"), Tensor::zeros(vec![d])),
            cls_start: store.add(format!("{prefix}.cls_start"), uniform(rng, vec![d], TOKEN_INIT)),
            cls_end: (cfg.cls_policy == ClsPolicy::BothEnds)
                .then(|| store.add(format!("{prefix}.cls_end"), uniform(rng, vec![d], TOKEN_INIT))),
            pos: store.add(format!("{prefix}.pos"), uniform(rng, vec![cfg.total_tokens(), d], TOKEN_INIT)),
            blocks: (0..cfg.depth)
                .map(|l| BiBlockParams::init(store, &format!("{prefix}.block{l}"), &block_cfg, rng))
                .collect(),
        }
    }
}

impl FusionParams {
    fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, h, leads) = (cfg.dim, 2 * cfg.dim, cfg.leads);
        Self {
            ffn_w1: store.add("fusion.ffn_w1", fan_in(rng, d, vec![d, h])),
            ffn_b1: store.add("fusion.ffn_b1", Tensor::zeros(vec![h])),
            ffn_w2: store.add("fusion.ffn_w2", fan_in(rng, h, vec![h, d])),
            ffn_b2: store.add("fusion.ffn_b2", Tensor::zeros(vec![d])),
            se_w1: store.add("fusion.se_w1", fan_in(rng, leads, vec![leads, SE_HIDDEN])),
            se_b1: store.add("fusion.se_b1", Tensor::zeros(vec![SE_HIDDEN])),
            se_w2: store.add("fusion.se_w2", fan_in(rng, SE_HIDDEN, vec![SE_HIDDEN, leads])),
            se_b2: store.add("fusion.se_b2", Tensor::zeros(vec![leads])),
        }
    }
}

impl HeadParams {
    fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, h) = (cfg.dim, cfg.head_dim);
        let wide = cfg.leads * h;
        let mut lead_w = Vec::with_capacity(cfg.leads);
        let mut lead_b = Vec::with_capacity(cfg.leads);
        for i in 0..cfg.leads {
            lead_w.push(store.add(format!("head.lead{i}.w"), fan_in(rng, d, vec![d, h])));
            lead_b.push(store.add(format!("head.lead{i}.b"), Tensor::zeros(vec![h])));
        }
        Self {
            lead_w,
            lead_b,
            bn_gain: store.add("head.bn_gain", Tensor::full(vec![wide], 1.0)),
            bn_bias: store.add("head.bn_bias", Tensor::zeros(vec![wide])),
            out_w: store.add("head.out_w", fan_in(rng, wide, vec![wide, cfg.classes])),
            out_b: store.add("head.out_b", Tensor::zeros(vec![cfg.classes])),
        }
    }
}

/// Learnable scalars of a model built from `cfg`, by arithmetic on the
/// architecture rather than by constructing it.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (d, n, k, p) = (cfg.dim, cfg.state_n, cfg.conv_kernel, cfg.patch_len);
    let out_in = if cfg.bidirectional && cfg.direction_combine == DirectionCombine::Concat { 2 * d } else { d };
    let shared = 2 * d + 2 * (d * d + d) + out_in * d + d;
    let direction = (d * k + d) + 2 * d * n + (d * d + d) + d * n + d;
    let directions = if cfg.bidirectional { 2 } else { 1 };
    let block = shared + directions * direction;
    let branch = (p * d + d) + cfg.cls_policy.count() * d + cfg.total_tokens() * d + cfg.depth * block;
    let fusion = match cfg.fusion {
        FusionMode::Full => {
            (d * 2 * d + 2 * d) + (2 * d * d + d) + (cfg.leads * SE_HIDDEN + SE_HIDDEN) + (SE_HIDDEN * cfg.leads + cfg.leads)
        }
        FusionMode::ConcatOnly => 0,
    };
    let wide = cfg.leads * cfg.head_dim;
    let head = cfg.leads * (d * cfg.head_dim + cfg.head_dim) + 2 * wide + wide * cfg.classes + cfg.classes;
    cfg.branch_count() * branch + fusion + head
}

/// Stacks records into a `[batch, leads, length]` tensor.
pub fn batch_tensor(records: &[&EcgRecord]) -> Result<Tensor> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (leads, len) = (first.leads(), first.len());
    let mut data = Vec::with_capacity(records.len() * leads * len);
    for r in records {
        if (r.leads(), r.len()) != (leads, len) {
            return Err(Error::shape(
                "batch",
                format!("record `{}` is {}x{}, batch is {leads}x{len}", r.id, r.leads(), r.len()),
            ));
        }
        data.extend_from_slice(r.samples());
    }
    Tensor::new(vec![records.len(), leads, len], data)
}

impl S2m2Ecg {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let branches = (0..config.branch_count())
            .map(|i| {
                let prefix = if config.multi_branch { format!("lead{i}") } else { "shared".to_string() };
                LeadBranch::init(&mut store, &prefix, &config, &mut rng)
            })
            .collect();
        let fusion = (config.fusion == FusionMode::Full).then(|| FusionParams::init(&mut store, &config, &mut rng));
        let head = HeadParams::init(&mut store, &config, &mut rng);
        let running = RunningStats::new(config.leads * config.head_dim);
        Ok(Self {
            config,
            store,
            branches,
            fusion,
            head,
            running,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn running_stats(&self) -> &RunningStats {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut RunningStats {
        &mut self.running
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Branch serving `lead`; every lead maps to branch 0 without
    /// multi-branch.
    pub fn branch(&self, lead: usize) -> &LeadBranch {
        &self.branches[if self.config.multi_branch { lead } else { 0 }]
    }

    /// Windows of one lead across the batch, `[batch, N, p]`.
    pub fn patches(&self, batch: &Tensor, lead: usize) -> Result<Tensor> {
        if batch.rank() != 3 || batch.shape()[1] != self.config.leads {
            return Err(Error::shape(
                "model input",
                format!("expected [batch, {}, length], got {:?}", self.config.leads, batch.shape()),
            ));
        }
        let (b, leads, len) = (batch.shape()[0], batch.shape()[1], batch.shape()[2]);
        let p = self.config.patch_len;
        let starts = window_starts(len, p, self.config.step)?;
        let mut data = Vec::with_capacity(b * starts.len() * p);
        for r in 0..b {
            let row = &batch.data()[(r * leads + lead) * len..(r * leads + lead + 1) * len];
            for &s in &starts {
                data.extend_from_slice(&row[s..s + p]);
            }
        }
        Tensor::new(vec![b, starts.len(), p], data)
    }

    /// Embedded, CLS-wrapped, position-tagged tokens `[batch, N_total, dim]`.
    pub fn branch_tokens<B: Backend>(&self, be: &mut B, lead: usize, patches: Tensor) -> Result<B::Value> {
        let br = self.branch(lead);
        let s = &self.store;
        let x = be.constant(patches);
        let (w, b) = (be.param(s, br.embed_w), be.param(s, br.embed_b));
        let emb = be.linear(&x, &w, Some(&b))?;
        let start = be.param(s, br.cls_start);
        let end = br.cls_end.map(|id| be.param(s, id));
        let wrapped = be.wrap_tokens(&emb, &start, end.as_ref())?;
        let total = be.tensor(&wrapped).shape()[1];
        let table = be.param(s, br.pos);
        let pos = be.take_rows(&table, total)?;
        be.add_broadcast(&wrapped, &pos)
    }

    /// Block stack plus readout on already-assembled tokens.
    pub fn branch_encode<B: Backend>(&self, be: &mut B, lead: usize, tokens: &B::Value) -> Result<B::Value> {
        let br = self.branch(lead);
        let cfg = self.config.block();
        let mut x = tokens.clone();
        let mut sum: Option<B::Value> = None;
        for block in &br.blocks {
            x = bidirectional_block(be, &self.store, &x, block, &cfg)?;
            if self.config.layer_readout == LayerReadout::Sum {
                sum = Some(match sum {
                    None => x.clone(),
                    Some(acc) => be.add(&acc, &x)?,
                });
            }
        }
        Ok(sum.unwrap_or(x))
    }

    /// Feature map of one lead, `[batch, N_total, dim]`.
    pub fn branch_forward<B: Backend>(&self, be: &mut B, batch: &Tensor, lead: usize) -> Result<B::Value> {
        let patches = self.patches(batch, lead)?;
        let tokens = self.branch_tokens(be, lead, patches)?;
        self.branch_encode(be, lead, &tokens)
    }

    /// FFN (residual) and squeeze-and-excitation over the 12 lead maps.
    /// Returns the rescaled maps and the `[batch, leads]` weights.
    pub fn lead_fusion<B: Backend>(&self, be: &mut B, features: &[B::Value]) -> Result<(Vec<B::Value>, Option<B::Value>)> {
        if features.len() != self.config.leads {
            return Err(Error::shape(
                "lead fusion",
                format!("expected {} lead maps, got {}", self.config.leads, features.len()),
            ));
        }
        let Some(f) = &self.fusion else {
            return Ok((features.to_vec(), None));
        };
        let s = &self.store;
        let (w1, b1) = (be.param(s, f.ffn_w1), be.param(s, f.ffn_b1));
        let (w2, b2) = (be.param(s, f.ffn_w2), be.param(s, f.ffn_b2));
        let mut mixed = Vec::with_capacity(features.len());
        for x in features {
            let h = be.linear(x, &w1, Some(&b1))?;
            let h = be.silu(&h)?;
            let h = be.linear(&h, &w2, Some(&b2))?;
            mixed.push(be.add(x, &h)?);
        }
        let squeezed: Vec<B::Value> = mixed.iter().map(|m| be.sample_mean(m)).collect::<Result<_>>()?;
        let z = be.stack_columns(&squeezed)?;
        let (sw1, sb1) = (be.param(s, f.se_w1), be.param(s, f.se_b1));
        let (sw2, sb2) = (be.param(s, f.se_w2), be.param(s, f.se_b2));
        let e = be.linear(&z, &sw1, Some(&sb1))?;
        let e = be.silu(&e)?;
        let e = be.linear(&e, &sw2, Some(&sb2))?;
        let weights = be.sigmoid(&e)?;
        let mut out = Vec::with_capacity(mixed.len());
        for (i, m) in mixed.iter().enumerate() {
            let w = be.column(&weights, i)?;
            out.push(be.mul_prefix(m, &w)?);
        }
        Ok((out, Some(weights)))
    }

    /// Per-lead pooling and projection, batch norm, classifier.
    pub fn classify_head<B: Backend>(
        &self,
        be: &mut B,
        fused: &[B::Value],
        mode: Mode,
    ) -> Result<(B::Value, Option<BatchStats>)> {
        let s = &self.store;
        let h = &self.head;
        let mut parts = Vec::with_capacity(fused.len());
        for (i, x) in fused.iter().enumerate() {
            let pooled = be.mean_time(x)?;
            let (w, b) = (be.param(s, h.lead_w[i]), be.param(s, h.lead_b[i]));
            let y = be.linear(&pooled, &w, Some(&b))?;
            parts.push(be.silu(&y)?);
        }
        let wide = be.concat_last(&parts)?;
        let (g, bb) = (be.param(s, h.bn_gain), be.param(s, h.bn_bias));
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => self.running.mode(),
        };
        let (normed, stats) = be.batch_norm(&wide, &g, &bb, bn_mode)?;
        let (w, b) = (be.param(s, h.out_w), be.param(s, h.out_b));
        Ok((be.linear(&normed, &w, Some(&b))?, stats))
    }

    /// `batch` is `[batch, leads, length]` of preprocessed signals.
    pub fn forward<B: Backend>(&self, be: &mut B, batch: &Tensor, mode: Mode) -> Result<Forward<B::Value>> {
        let features: Vec<B::Value> = (0..self.config.leads)
            .map(|lead| self.branch_forward(be, batch, lead))
            .collect::<Result<_>>()?;
        let (fused, se_weights) = self.lead_fusion(be, &features)?;
        let (logits, batch_stats) = self.classify_head(be, &fused, mode)?;
        Ok(Forward {
            logits,
            batch_stats,
            se_weights,
        })
    }

    /// Eval-mode logits without a tape.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let out = self.forward(&mut Eager, batch, Mode::Eval)?;
        Ok(std::sync::Arc::unwrap_or_clone(out.logits))
    }

    /// Class probabilities for each record, `[records, classes]`.
    pub fn predict_proba(&self, records: &[&EcgRecord]) -> Result<Tensor> {
        ops::softmax(&self.logits(&batch_tensor(records)?)?)
    }
}
