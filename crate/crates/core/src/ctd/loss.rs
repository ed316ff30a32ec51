//! In-batch score matrices, the multi-positive contrastive loss, the
//! calendar-head loss and their joint gradient.

use serde::{Deserialize, Serialize};

use super::model::{dot, ItemForward, MlpForward};
use super::{CtdParams, Group, ScoreConfig};
use crate::calendar::{interval_overlap, CalendarManifest, Interval, TimeKey};
use crate::error::{Error, Result};

/// One training batch: query `i` is paired with record `i`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub queries: Vec<Vec<f64>>,
    pub records: Vec<Vec<f64>>,
    /// 0-based (gong, year, month) head labels of each record.
    pub labels: Vec<[usize; 3]>,
    /// Row-major `B×B`; entry `(i, j)` marks record `j` relevant to query `i`.
    pub positives: Vec<bool>,
}

impl Batch {
    pub fn new(
        queries: Vec<Vec<f64>>,
        records: Vec<Vec<f64>>,
        labels: Vec<[usize; 3]>,
        positives: Vec<bool>,
    ) -> Result<Self> {
        let b = queries.len();
        if b == 0 || records.len() != b || labels.len() != b || positives.len() != b * b {
            return Err(Error::Consistency(format!(
                "batch shapes disagree: {} queries, {} records, {} labels, {} mask entries",
                b,
                records.len(),
                labels.len(),
                positives.len()
            )));
        }
        if let Some(i) = (0..b).find(|&i| !positives[i * b + i]) {
            return Err(Error::Consistency(format!("query {i} is not paired with a positive record")));
        }
        Ok(Self {
            queries,
            records,
            labels,
            positives,
        })
    }

    /// Builds the positive mask from interval overlap.
    pub fn from_intervals(
        queries: Vec<Vec<f64>>,
        records: Vec<Vec<f64>>,
        keys: &[TimeKey],
        intervals: &[Interval],
        manifest: &CalendarManifest,
    ) -> Result<Self> {
        let b = intervals.len();
        let mut positives = vec![false; b * b];
        for (i, q) in intervals.iter().enumerate() {
            for (j, k) in keys.iter().enumerate() {
                positives[i * b + j] = interval_overlap(q, &Interval::point(*k), manifest)?;
            }
        }
        let labels = keys
            .iter()
            .map(|k| [k.gong as usize, k.year as usize - 1, k.month as usize - 1])
            .collect();
        Self::new(queries, records, labels, positives)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Spread σ evenly over all classes.
    Uniform,
    /// Spread σ over the adjacent ordered classes.
    Neighbor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub score: ScoreConfig,
    /// Use interval-overlap positives; otherwise only the paired record.
    pub multi: bool,
    pub lambda_time: f64,
    pub smoothing: f64,
    pub smoothing_mode: Smoothing,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            score: ScoreConfig::CTD,
            multi: true,
            lambda_time: 0.1,
            smoothing: 0.2,
            smoothing_mode: Smoothing::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub multi: f64,
    pub time: f64,
}

fn forward_all(params: &CtdParams, batch: &Batch, cfg: ScoreConfig) -> (Vec<ItemForward>, Vec<ItemForward>) {
    (
        batch.queries.iter().map(|h| params.forward_item(h, cfg)).collect(),
        batch.records.iter().map(|h| params.forward_item(h, cfg)).collect(),
    )
}

fn scores(
    params: &CtdParams,
    fq: &[ItemForward],
    fd: &[ItemForward],
    cfg: ScoreConfig,
    keep_mlp: bool,
) -> Result<(Vec<f64>, Vec<MlpForward>)> {
    let b = fq.len();
    let eps = params.epsilon();
    let mut s = vec![0.0; b * fd.len()];
    let mut cache = Vec::new();
    for (i, q) in fq.iter().enumerate() {
        for (j, d) in fd.iter().enumerate() {
            let mut v = dot(&q.zt, &d.zt) / params.alpha;
            if cfg.bias && (eps != 0.0 || keep_mlp) {
                let mf = params.mlp_forward(d.u - q.u);
                if eps != 0.0 {
                    v += eps * mf.out;
                }
                if keep_mlp {
                    cache.push(mf);
                }
            }
            s[i * fd.len() + j] = v;
        }
    }
    if let Some(at) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "score ({}, {}) = {} (γ = {}, ε = {}, u_q = {}, u_d = {})",
            at / fd.len(),
            at % fd.len(),
            s[at],
            params.gamma(),
            eps,
            fq[at / fd.len()].u,
            fd[at % fd.len()].u
        )));
    }
    Ok((s, cache))
}

/// `B×B` score matrix, row-major, queries by records.
pub fn score_matrix(batch: &Batch, params: &CtdParams, cfg: ScoreConfig) -> Result<Vec<f64>> {
    let (fq, fd) = forward_all(params, batch, cfg);
    Ok(scores(params, &fq, &fd, cfg, false)?.0)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Value and `∂L/∂S` of the symmetric multi-positive InfoNCE loss.
fn multi_nce(s: &[f64], mask: &[bool], b: usize) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut ds = vec![0.0; b * b];
    let scale = 0.5 / b as f64;
    for transpose in [false, true] {
        let at = |i: usize, j: usize| if transpose { j * b + i } else { i * b + j };
        for i in 0..b {
            let row = (0..b).map(|j| s[at(i, j)]);
            let pos = (0..b).filter(|&j| mask[at(i, j)]).map(|j| s[at(i, j)]);
            if pos.clone().next().is_none() {
                return Err(Error::Consistency(format!(
                    "{} {i} has no positive",
                    if transpose { "record" } else { "query" }
                )));
            }
            let all_lse = log_sum_exp(row);
            let pos_lse = log_sum_exp(pos);
            loss += scale * (all_lse - pos_lse);
            for j in 0..b {
                let k = at(i, j);
                let mut g = (s[k] - all_lse).exp();
                if mask[k] {
                    g -= (s[k] - pos_lse).exp();
                }
                ds[k] += scale * g;
            }
        }
    }
    Ok((loss, ds))
}

/// Symmetric multi-positive InfoNCE over a `B×B` score matrix.
pub fn loss_multi(s: &[f64], mask: &[bool], b: usize) -> Result<f64> {
    if s.len() != b * b || mask.len() != b * b {
        return Err(Error::Consistency("score matrix and mask must be B×B".into()));
    }
    Ok(multi_nce(s, mask, b)?.0)
}

/// Smoothed one-hot target over `n` ordered classes.
pub fn smoothed_target(n: usize, label: usize, sigma: f64, mode: Smoothing) -> Vec<f64> {
    let mut t = vec![0.0; n];
    match mode {
        Smoothing::Uniform => {
            t.iter_mut().for_each(|v| *v = sigma / n as f64);
            t[label] += 1.0 - sigma;
        }
        Smoothing::Neighbor => {
            let neighbors: Vec<usize> = [label.checked_sub(1), (label + 1 < n).then_some(label + 1)]
                .into_iter()
                .flatten()
                .collect();
            if neighbors.is_empty() {
                t[label] = 1.0;
            } else {
                t[label] = 1.0 - sigma;
                for k in &neighbors {
                    t[*k] = sigma / neighbors.len() as f64;
                }
            }
        }
    }
    t
}

fn cross_entropy(target: &[f64], p: &[f64]) -> f64 {
    target
        .iter()
        .zip(p)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| -t * p.ln())
        .sum()
}

/// Mean over records of the summed per-axis cross-entropy.
pub fn loss_time(probs: &[[Vec<f64>; 3]], labels: &[[usize; 3]], sigma: f64, mode: Smoothing) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            (0..3)
                .map(|r| cross_entropy(&smoothed_target(p[r].len(), l[r], sigma, mode), &p[r]))
                .sum::<f64>()
        })
        .sum();
    total / probs.len() as f64
}

fn positive_mask(batch: &Batch, multi: bool) -> Vec<bool> {
    let b = batch.len();
    if multi {
        batch.positives.clone()
    } else {
        (0..b * b).map(|k| k / b == k % b).collect()
    }
}

/// Value of [`loss_total`] without the backward pass.
pub fn loss_value(batch: &Batch, params: &CtdParams, cfg: &LossConfig) -> Result<LossValue> {
    let b = batch.len();
    let (fq, fd) = forward_all(params, batch, cfg.score);
    let (s, _) = scores(params, &fq, &fd, cfg.score, false)?;
    let (multi, _) = multi_nce(&s, &positive_mask(batch, cfg.multi), b)?;
    let mut time = 0.0;
    if cfg.lambda_time != 0.0 {
        for (j, f) in fd.iter().enumerate() {
            for r in 0..3 {
                let t = smoothed_target(f.p[r].len(), batch.labels[j][r], cfg.smoothing, cfg.smoothing_mode);
                time += cross_entropy(&t, &f.p[r]);
            }
        }
        time /= b as f64;
    }
    Ok(LossValue {
        total: multi + cfg.lambda_time * time,
        multi,
        time,
    })
}

/// `L_multi + λ·L_time` and its gradient with respect to every parameter.
pub fn loss_total(batch: &Batch, params: &CtdParams, cfg: &LossConfig) -> Result<(LossValue, Vec<f64>)> {
    let b = batch.len();
    let score = cfg.score;
    let (fq, fd) = forward_all(params, batch, score);
    let (s, cache) = scores(params, &fq, &fd, score, true)?;
    let (multi, ds) = multi_nce(&s, &positive_mask(batch, cfg.multi), b)?;

    let mut grad = vec![0.0; params.theta.len()];
    let mut time = 0.0;
    let mut dlogits: Vec<Option<[Vec<f64>; 3]>> = vec![None; b];
    if cfg.lambda_time != 0.0 {
        for (j, f) in fd.iter().enumerate() {
            let mut dl: [Vec<f64>; 3] = Default::default();
            for r in 0..3 {
                let t = smoothed_target(f.p[r].len(), batch.labels[j][r], cfg.smoothing, cfg.smoothing_mode);
                time += cross_entropy(&t, &f.p[r]);
                dl[r] = f.p[r]
                    .iter()
                    .zip(&t)
                    .map(|(p, t)| cfg.lambda_time * (p - t) / b as f64)
                    .collect();
            }
            dlogits[j] = Some(dl);
        }
        time /= b as f64;
    }

    let h = params.dims().h;
    let eps = params.epsilon();
    let scale_at = params.layout().range(Group::Scale).start;
    let mut dzq = vec![vec![0.0; h]; b];
    let mut dzd = vec![vec![0.0; h]; b];
    let mut duq = vec![0.0; b];
    let mut dud = vec![0.0; b];
    for i in 0..b {
        for j in 0..b {
            let g = ds[i * b + j];
            if g == 0.0 {
                continue;
            }
            let ga = g / params.alpha;
            for k in 0..h {
                dzq[i][k] += ga * fd[j].zt[k];
                dzd[j][k] += ga * fq[i].zt[k];
            }
            if score.bias {
                let mf = &cache[i * b + j];
                grad[scale_at] += g * mf.out;
                if eps != 0.0 {
                    let ddu = params.mlp_backward(mf, g * eps, &mut grad);
                    dud[j] += ddu;
                    duq[i] -= ddu;
                }
            }
        }
    }
    for i in 0..b {
        params.backward_item(&batch.queries[i], &fq[i], &dzq[i], duq[i], None, score, &mut grad);
    }
    for j in 0..b {
        params.backward_item(&batch.records[j], &fd[j], &dzd[j], dud[j], dlogits[j].as_ref(), score, &mut grad);
    }

    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of {} is {}",
            params.layout().group_of(i).name(),
            grad[i]
        )));
    }
    let value = LossValue {
        total: multi + cfg.lambda_time * time,
        multi,
        time,
    };
    Ok((value, grad))
}
