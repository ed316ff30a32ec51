//! Batch construction, AdamW, the training loop and checkpoint selection.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Gallery, Split};
use crate::ctd::{loss_total, Batch, Checkpoint, CtdDims, CtdParams, Group, Layout, LossConfig, ScoreConfig, Smoothing};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{official_r1, write_atomic, DenseScorer};
use crate::querygen::Query;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup: f64,
    pub lambda_time: f64,
    pub smoothing: f64,
    pub smoothing_mode: Smoothing,
    /// Interval-overlap positives instead of the single paired record.
    pub use_multi: bool,
    pub use_bias: bool,
    pub use_ctx: bool,
    /// Supervise the calendar heads whenever context or bias is on.
    pub time_loss: bool,
    pub alpha: f64,
    /// Drop a final batch shorter than `batch_size`.
    pub drop_last: bool,
    /// Subsample this many training queries per epoch.
    pub queries_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 6,
            lr: 2e-3,
            weight_decay: 0.01,
            warmup: 0.1,
            lambda_time: 0.1,
            smoothing: 0.2,
            smoothing_mode: Smoothing::Uniform,
            use_multi: true,
            use_bias: true,
            use_ctx: true,
            time_loss: true,
            alpha: crate::ctd::DEFAULT_ALPHA,
            drop_last: false,
            queries_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Ablation presets: `ft`, `multi`, `bias`, `ctx`, `full`.
    pub fn ablation(name: &str) -> Result<Self> {
        let (use_multi, use_bias, use_ctx) = match name {
            "ft" => (false, false, false),
            "multi" => (true, false, false),
            "bias" => (true, true, false),
            "ctx" => (true, false, true),
            "full" => (true, true, true),
            _ => return Err(Error::Config(format!("unknown ablation {name:?} (ft, multi, bias, ctx, full)"))),
        };
        Ok(Self {
            use_multi,
            use_bias,
            use_ctx,
            ..Self::default()
        })
    }

    pub fn score(&self) -> ScoreConfig {
        ScoreConfig {
            context: self.use_ctx,
            bias: self.use_bias,
        }
    }

    pub fn loss(&self) -> LossConfig {
        let heads = self.use_ctx || self.use_bias;
        LossConfig {
            score: self.score(),
            multi: self.use_multi,
            lambda_time: if self.time_loss && heads { self.lambda_time } else { 0.0 },
            smoothing: self.smoothing,
            smoothing_mode: self.smoothing_mode,
        }
    }

    /// Parameter groups the optimizer updates.
    pub fn trainable(&self) -> BTreeSet<Group> {
        let mut out = BTreeSet::from([Group::Adapter]);
        if self.use_ctx || self.use_bias {
            out.extend([Group::HeadG, Group::BiasG, Group::HeadY, Group::BiasY, Group::HeadM, Group::BiasM]);
        }
        if self.use_ctx {
            out.extend([Group::Context, Group::Gate]);
        }
        if self.use_bias {
            out.extend([Group::Mlp1, Group::MlpBias1, Group::Mlp2, Group::MlpBias2, Group::Scale]);
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Config(format!("warmup fraction {} outside [0, 1)", self.warmup)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.smoothing)
        {
            return Err(Error::Config("learning rate, weight decay or smoothing out of range".into()));
        }
        Ok(())
    }
}

/// Queries and gold records of one batch (indices into the inputs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub queries: Vec<usize>,
    pub records: Vec<usize>,
}

/// Shuffles `queries`, chunks them into batches of `b` and samples one gold
/// record per query uniformly from its ground truth.
pub fn make_batches(queries: &[Query], gallery: &Gallery, b: usize, seed: u64, drop_last: bool) -> Result<Vec<BatchPlan>> {
    if b < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    for chunk in order.chunks(b) {
        if chunk.len() < b && (drop_last || chunk.len() < 2) {
            continue;
        }
        let mut records = Vec::with_capacity(chunk.len());
        for &qi in chunk {
            let gold: Vec<usize> = queries[qi].gt_ids.iter().filter_map(|id| gallery.index_of(id)).collect();
            if gold.is_empty() {
                return Err(Error::Consistency(format!(
                    "query {} has no ground-truth record in the training gallery",
                    queries[qi].id
                )));
            }
            records.push(gold[rng.random_range(0..gold.len())]);
        }
        out.push(BatchPlan {
            queries: chunk.to_vec(),
            records,
        });
    }
    Ok(out)
}

impl BatchPlan {
    pub fn tensors(&self, queries: &[Query], gallery: &Gallery, qvec: &[Vec<f64>], rvec: &[Vec<f64>]) -> Result<Batch> {
        let keys: Vec<_> = self.records.iter().map(|&j| gallery.records()[j].key).collect();
        let intervals: Vec<_> = self.queries.iter().map(|&i| queries[i].interval()).collect();
        Batch::from_intervals(
            self.queries.iter().map(|&i| qvec[i].clone()).collect(),
            self.records.iter().map(|&j| rvec[j].clone()).collect(),
            &keys,
            &intervals,
            gallery.manifest(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// How the optimizer treats one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Frozen,
    /// Updated without weight decay.
    Plain,
    /// Updated with decoupled weight decay.
    Decayed,
}

pub fn param_roles(layout: &Layout, trainable: &BTreeSet<Group>) -> Vec<Role> {
    let mut roles = vec![Role::Frozen; layout.len()];
    for &g in trainable {
        let role = if g.is_matrix() { Role::Decayed } else { Role::Plain };
        roles[layout.range(g)].fill(role);
    }
    roles
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Linear warmup to 1 over `warmup_steps`, then linear decay to 0 at `total`.
pub fn lr_multiplier(step: usize, total: usize, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        step as f64 / warmup_steps as f64
    } else if total <= warmup_steps {
        1.0
    } else {
        (total.saturating_sub(step)) as f64 / (total - warmup_steps) as f64
    }
}

/// One AdamW update with learning rate `lr` (already scheduled).
pub fn optimizer_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, roles: &[Role], lr: f64, cfg: &AdamWConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..theta.len() {
        if roles[i] == Role::Frozen {
            continue;
        }
        if roles[i] == Role::Decayed {
            theta[i] -= lr * cfg.weight_decay * theta[i];
        }
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        theta[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_r1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Everything a training run reads.
pub struct TrainData<'a> {
    pub gallery: &'a Gallery,
    pub queries: &'a [Query],
    pub record_emb: &'a EmbeddingMatrix,
    pub query_emb: &'a EmbeddingMatrix,
}

fn rows(m: &EmbeddingMatrix, ids: impl Iterator<Item = impl AsRef<str>>) -> Result<Vec<Vec<f64>>> {
    ids.map(|id| {
        m.get_f64(id.as_ref())
            .ok_or_else(|| Error::Consistency(format!("no embedding for {:?}", id.as_ref())))
    })
    .collect()
}

fn curve_csv(curve: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,val_R@1\n");
    for e in curve {
        s.push_str(&format!("{},{:.8},{:.6}\n", e.epoch, e.loss, e.val_r1));
    }
    s
}

/// Trains on the train-split queries and keeps the checkpoint with the best
/// validation R@1 (earliest epoch on ties). With `run_dir`, writes
/// `config.json`, `curve.csv`, `best.ckpt` and `last.ckpt` as it goes.
pub fn train(config: &TrainConfig, data: &TrainData<'_>, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.check()?;
    let gallery = data.gallery;
    let manifest = gallery.manifest();
    let h = data.record_emb.dim();
    if data.query_emb.dim() != h {
        return Err(Error::Consistency("record and query embeddings differ in width".into()));
    }
    let train_records: Vec<_> = gallery
        .records()
        .iter()
        .filter(|r| r.rtype.is_retrievable() && r.split == Some(Split::Train))
        .cloned()
        .collect();
    let train_gallery = Gallery::new(manifest.clone(), train_records)?;
    let train_queries: Vec<Query> = data
        .queries
        .iter()
        .filter(|q| q.split == Some(Split::Train))
        .filter(|q| q.gt_ids.iter().any(|id| train_gallery.get(id).is_some()))
        .cloned()
        .collect();
    let val_queries: Vec<Query> = data
        .queries
        .iter()
        .filter(|q| q.split == Some(Split::Validation))
        .cloned()
        .collect();
    if train_queries.len() < 2 {
        return Err(Error::Config("need at least two training queries".into()));
    }
    let qvec = rows(data.query_emb, train_queries.iter().map(|q| &q.id))?;
    let rvec = rows(data.record_emb, train_gallery.records().iter().map(|r| &r.id))?;

    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(config)?.as_bytes())?;
    }

    let dims = CtdDims::for_manifest(h, manifest);
    let mut params = CtdParams::init(dims, config.alpha, manifest.fingerprint(), config.seed)?;
    let roles = param_roles(params.layout(), &config.trainable());
    let mut state = AdamState::new(params.theta.len());
    let adam = AdamWConfig::new(config.lr, config.weight_decay);
    let loss_cfg = config.loss();
    let score = config.score();

    let per_epoch = config.queries_per_epoch.unwrap_or(train_queries.len()).min(train_queries.len());
    let rest = per_epoch % config.batch_size;
    let batches_per_epoch = per_epoch / config.batch_size + (rest >= 2 && !config.drop_last) as usize;
    let total = batches_per_epoch * config.epochs;
    let warmup_steps = (config.warmup * total as f64).round() as usize;
    let mut step = 0;

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, CtdParams)> = None;
    for epoch in 1..=config.epochs {
        let epoch_seed = config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut idx: Vec<usize> = (0..train_queries.len()).collect();
        if per_epoch < train_queries.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed.rotate_left(17));
            idx.shuffle(&mut rng);
            idx.truncate(per_epoch);
            idx.sort_unstable();
        }
        let epoch_queries: Vec<Query> = idx.iter().map(|&i| train_queries[i].clone()).collect();
        let epoch_qvec: Vec<Vec<f64>> = idx.iter().map(|&i| qvec[i].clone()).collect();
        let plans = make_batches(&epoch_queries, &train_gallery, config.batch_size, epoch_seed, config.drop_last)?;
        let mut loss_sum = 0.0;
        for plan in &plans {
            let batch = plan.tensors(&epoch_queries, &train_gallery, &epoch_qvec, &rvec)?;
            let (value, grad) = loss_total(&batch, &params, &loss_cfg)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {step}: {e}")))?;
            if !value.total.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch}, step {step}: loss is {}", value.total)));
            }
            loss_sum += value.total;
            let lr = config.lr * lr_multiplier(step, total, warmup_steps);
            optimizer_step(&mut params.theta, &grad, &mut state, &roles, lr, &adam);
            step += 1;
        }
        if let Some(i) = params.theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: parameter {} diverged",
                params.layout().group_of(i).name()
            )));
        }
        let val_r1 = if val_queries.is_empty() {
            0.0
        } else {
            let scorer = DenseScorer {
                params: params.clone(),
                score,
                records: data.record_emb,
                queries: data.query_emb,
            };
            official_r1(&scorer, gallery, &val_queries)?
        };
        let stats = EpochStats {
            epoch,
            loss: loss_sum / plans.len().max(1) as f64,
            val_r1,
        };
        log::info!("epoch {epoch}: loss {:.5}, val R@1 {:.4}", stats.loss, stats.val_r1);
        curve.push(stats);
        let improved = best.as_ref().is_none_or(|(r, _, _)| val_r1 > *r);
        if improved {
            best = Some((val_r1, epoch, params.clone()));
        }
        if let Some(dir) = run_dir {
            write_atomic(&dir.join("curve.csv"), curve_csv(&curve).as_bytes())?;
            let last = Checkpoint {
                params: params.clone(),
                score,
            };
            write_atomic(&dir.join("last.ckpt"), &last.to_bytes())?;
            if improved {
                write_atomic(&dir.join("best.ckpt"), &last.to_bytes())?;
            }
        }
    }
    let (_, best_epoch, best_params) = best.ok_or_else(|| Error::Config("training needs at least one epoch".into()))?;
    Ok(TrainOutcome {
        curve,
        best_epoch,
        best: Checkpoint {
            params: best_params,
            score,
        },
        last: Checkpoint { params, score },
    })
}
