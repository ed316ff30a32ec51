//! Protocol-grid evaluation: gallery filtering switches, exhaustive ranking,
//! metrics, stratification and reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Gallery, RecordType};
use crate::ctd::{CtdParams, ItemForward, ScoreConfig};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::lexical::{sort_hits, timekde_rerank, Bm25Params, InvertedIndex, TimeKdeParams};
use crate::querygen::Query;

/// Ranked ids kept per query.
pub const RANK_DEPTH: usize = 100;

/// Gallery/query filtering switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProtocolMode {
    /// Keep `neg_comment` distractors in the gallery.
    pub neg: bool,
    /// Keep `no_event` records.
    pub ne: bool,
    /// Drop queries whose ground truth is purely `no_event`.
    pub dq: bool,
}

impl ProtocolMode {
    pub const OFFICIAL: Self = Self {
        neg: true,
        ne: true,
        dq: false,
    };

    pub fn new(neg: bool, ne: bool, dq: bool) -> Result<Self> {
        if !ne && !dq {
            return Err(Error::Protocol("ne=0 requires dq=1".into()));
        }
        Ok(Self { neg, ne, dq })
    }

    /// The six valid modes in grid order.
    pub fn grid() -> Vec<Self> {
        let mut out = Vec::new();
        for neg in [false, true] {
            for ne in [false, true] {
                for dq in [false, true] {
                    if let Ok(m) = Self::new(neg, ne, dq) {
                        out.push(m);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "neg{}_ne{}_dq{}", self.neg as u8, self.ne as u8, self.dq as u8)
    }
}

impl FromStr for ProtocolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Protocol(format!("mode {s:?} is not of the form negX_neY_dqZ"));
        let parts: Vec<&str> = s.split('_').collect();
        let [neg, ne, dq] = parts.as_slice() else {
            return Err(bad());
        };
        let flag = |part: &str, prefix: &str| match part.strip_prefix(prefix) {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            _ => Err(bad()),
        };
        Self::new(flag(neg, "neg")?, flag(ne, "ne")?, flag(dq, "dq")?)
    }
}

impl Serialize for ProtocolMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProtocolMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolCounts {
    pub gallery: usize,
    pub queries: usize,
    pub dropped_pure_no_event: usize,
    pub dropped_empty: usize,
}

/// Filters gallery and queries for `mode`.
pub fn apply_protocol(gallery: &Gallery, queries: &[Query], mode: ProtocolMode) -> Result<(Gallery, Vec<Query>, ProtocolCounts)> {
    let keep = |t: RecordType| match t {
        RecordType::Event => true,
        RecordType::NoEvent => mode.ne,
        RecordType::NegComment => mode.neg,
    };
    let records: Vec<_> = gallery.records().iter().filter(|r| keep(r.rtype)).cloned().collect();
    let removed: HashSet<&str> = gallery
        .records()
        .iter()
        .filter(|r| !keep(r.rtype))
        .map(|r| r.id.as_str())
        .collect();
    let filtered = Gallery::new(gallery.manifest().clone(), records)?;
    let mut counts = ProtocolCounts {
        gallery: filtered.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for q in queries {
        if mode.dq && q.is_pure_no_event {
            counts.dropped_pure_no_event += 1;
            continue;
        }
        let mut q = q.clone();
        q.gt_ids.retain(|id| !removed.contains(id.as_str()));
        if q.gt_ids.is_empty() {
            counts.dropped_empty += 1;
            continue;
        }
        out.push(q);
    }
    counts.queries = out.len();
    Ok((filtered, out, counts))
}

/// Scores queries against one gallery.
pub trait PreparedScorer: Sync {
    /// Top-`depth` `(gallery index, score)` pairs, best first, ties by id.
    fn rank(&self, query: &Query, depth: usize) -> Result<Vec<(usize, f64)>>;
}

pub trait Scorer: Sync {
    fn name(&self) -> String;
    fn prepare<'a>(&'a self, gallery: &'a Gallery) -> Result<Box<dyn PreparedScorer + 'a>>;
}

/// Orders gallery indices by descending score, ties by ascending id.
pub fn rank_scores(gallery: &Gallery, scores: &[f64], depth: usize) -> Vec<(usize, f64)> {
    let records = gallery.records();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .total_cmp(&scores[*a])
            .then_with(|| records[*a].id.cmp(&records[*b].id))
    };
    if depth < order.len() {
        order.select_nth_unstable_by(depth, cmp);
        order.truncate(depth);
    }
    order.sort_by(cmp);
    order.into_iter().map(|i| (i, scores[i])).collect()
}

pub struct Bm25Scorer {
    pub params: Bm25Params,
    /// Re-rank with a temporal density prior.
    pub kde: Option<TimeKdeParams>,
}

struct PreparedBm25<'a> {
    index: InvertedIndex,
    gallery: &'a Gallery,
    params: Bm25Params,
    kde: Option<TimeKdeParams>,
}

impl Scorer for Bm25Scorer {
    fn name(&self) -> String {
        if self.kde.is_some() { "bm25+timekde" } else { "bm25" }.to_string()
    }

    fn prepare<'a>(&'a self, gallery: &'a Gallery) -> Result<Box<dyn PreparedScorer + 'a>> {
        Ok(Box::new(PreparedBm25 {
            index: InvertedIndex::from_gallery(gallery),
            gallery,
            params: self.params,
            kde: self.kde,
        }))
    }
}

impl PreparedScorer for PreparedBm25<'_> {
    fn rank(&self, query: &Query, depth: usize) -> Result<Vec<(usize, f64)>> {
        let scores = self.index.score_all(&query.text, self.params)?;
        let ranked = rank_scores(self.gallery, &scores, depth);
        let Some(kde) = self.kde else {
            return Ok(ranked);
        };
        let hits: Vec<(String, f64)> = ranked
            .iter()
            .map(|&(i, s)| (self.gallery.records()[i].id.clone(), s))
            .collect();
        let mut reranked = timekde_rerank(&hits, self.gallery, kde)?;
        sort_hits(&mut reranked);
        Ok(reranked
            .into_iter()
            .map(|(id, s)| (self.gallery.index_of(&id).expect("reranked ids come from the gallery"), s))
            .collect())
    }
}

/// Dense scorer over fixed embeddings with an optional trained head.
pub struct DenseScorer<'e> {
    pub params: CtdParams,
    pub score: ScoreConfig,
    pub records: &'e EmbeddingMatrix,
    pub queries: &'e EmbeddingMatrix,
}

struct PreparedDense<'a> {
    scorer: &'a DenseScorer<'a>,
    gallery: &'a Gallery,
    items: Vec<ItemForward>,
}

fn lookup(m: &EmbeddingMatrix, id: &str, what: &str) -> Result<Vec<f64>> {
    m.get_f64(id)
        .ok_or_else(|| Error::Consistency(format!("no embedding for {what} {id:?}")))
}

impl Scorer for DenseScorer<'_> {
    fn name(&self) -> String {
        self.score.name().to_string()
    }

    fn prepare<'a>(&'a self, gallery: &'a Gallery) -> Result<Box<dyn PreparedScorer + 'a>> {
        let h = self.params.dims().h;
        if self.records.dim() != h || self.queries.dim() != h {
            return Err(Error::Consistency(format!(
                "embedding width {}/{} does not match model width {h}",
                self.records.dim(),
                self.queries.dim()
            )));
        }
        let items = gallery
            .records()
            .iter()
            .map(|r| Ok(self.params.forward_item(&lookup(self.records, &r.id, "record")?, self.score)))
            .collect::<Result<_>>()?;
        Ok(Box::new(PreparedDense {
            scorer: self,
            gallery,
            items,
        }))
    }
}

impl PreparedScorer for PreparedDense<'_> {
    fn rank(&self, query: &Query, depth: usize) -> Result<Vec<(usize, f64)>> {
        let s = self.scorer;
        let q = s.params.forward_item(&lookup(s.queries, &query.id, "query")?, s.score);
        let scores: Vec<f64> = self.items.iter().map(|d| s.params.pair_score(&q, d, s.score)).collect();
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "score of query {} against {} is {}",
                query.id,
                self.gallery.records()[i].id,
                scores[i]
            )));
        }
        Ok(rank_scores(self.gallery, &scores, depth))
    }
}

/// Ranked ids per query, in query order.
pub fn rank_all(scorer: &dyn Scorer, queries: &[Query], gallery: &Gallery, depth: usize) -> Result<Vec<Vec<(String, f64)>>> {
    let prepared = scorer.prepare(gallery)?;
    queries
        .par_iter()
        .map(|q| {
            Ok(prepared
                .rank(q, depth)?
                .into_iter()
                .map(|(i, s)| (gallery.records()[i].id.clone(), s))
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    /// Fraction of queries with at least one relevant id in the top K.
    #[default]
    HitRate,
    /// Mean fraction of the ground-truth set found in the top K.
    SetRecall,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    #[serde(rename = "R@1")]
    pub r1: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
    #[serde(rename = "MRR@10")]
    pub mrr10: f64,
    #[serde(rename = "nDCG@10")]
    pub ndcg10: f64,
}

/// R@{1,5,10}, MRR@10 and binary-gain nDCG@10 averaged over queries.
pub fn compute_metrics<S: AsRef<str>>(rankings: &[Vec<S>], ground_truths: &[Vec<String>], recall: RecallMode) -> Result<Metrics> {
    if rankings.len() != ground_truths.len() {
        return Err(Error::Consistency("rankings and ground truths differ in length".into()));
    }
    let n = rankings.len();
    let mut m = Metrics {
        queries: n,
        ..Default::default()
    };
    if n == 0 {
        return Ok(m);
    }
    for (ranked, gt) in rankings.iter().zip(ground_truths) {
        if gt.is_empty() {
            return Err(Error::Protocol("query with empty ground truth reached scoring".into()));
        }
        let gt: HashSet<&str> = gt.iter().map(String::as_str).collect();
        let rel: Vec<bool> = ranked.iter().take(10).map(|id| gt.contains(id.as_ref())).collect();
        let recall_at = |k: usize| {
            let found = rel.iter().take(k).filter(|r| **r).count();
            match recall {
                RecallMode::HitRate => (found > 0) as u8 as f64,
                RecallMode::SetRecall => found as f64 / gt.len() as f64,
            }
        };
        m.r1 += recall_at(1);
        m.r5 += recall_at(5);
        m.r10 += recall_at(10);
        if let Some(pos) = rel.iter().position(|r| *r) {
            m.mrr10 += 1.0 / (pos + 1) as f64;
        }
        let dcg: f64 = rel
            .iter()
            .enumerate()
            .filter(|(_, r)| **r)
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum();
        let ideal: f64 = (0..gt.len().min(10)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
        m.ndcg10 += dcg / ideal;
    }
    let nf = n as f64;
    m.r1 /= nf;
    m.r5 /= nf;
    m.r10 /= nf;
    m.mrr10 /= nf;
    m.ndcg10 /= nf;
    Ok(m)
}

/// Stratum labels of a query: family (`point`/`window`) and span (`span=1`/`span>1`).
pub fn stratum(query: &Query) -> (&'static str, &'static str) {
    let family = match query.group() {
        Some(g) if g.is_point() => "point",
        Some(_) => "window",
        None if query.span_months == 1 => "point",
        None => "window",
    };
    (family, if query.span_months == 1 { "span=1" } else { "span>1" })
}

/// Query indices per stratum, keyed `family/span` with `all` wildcards.
pub fn stratify(queries: &[Query]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        let (family, span) = stratum(q);
        for f in ["all", family] {
            for s in ["all", span] {
                out.entry(format!("{f}/{s}")).or_default().push(i);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub counts: ProtocolCounts,
    /// Metrics per `family/span` stratum.
    pub strata: BTreeMap<String, Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rankings: Option<BTreeMap<String, Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scorer: String,
    pub config: serde_json::Value,
    pub modes: BTreeMap<String, ModeReport>,
}

impl RunReport {
    pub fn official(&self) -> Option<&Metrics> {
        self.modes
            .get(&ProtocolMode::OFFICIAL.to_string())
            .and_then(|m| m.strata.get("all/all"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub recall: RecallMode,
    /// Keep the top-100 ranked ids per query in the report.
    pub keep_rankings: bool,
}

/// Ranks and scores `queries` under one protocol mode.
pub fn evaluate_mode(
    scorer: &dyn Scorer,
    gallery: &Gallery,
    queries: &[Query],
    mode: ProtocolMode,
    opts: EvalOptions,
) -> Result<(ModeReport, Vec<Vec<(String, f64)>>, Vec<Query>)> {
    let (g, qs, counts) = apply_protocol(gallery, queries, mode)?;
    let ranked = rank_all(scorer, &qs, &g, RANK_DEPTH)?;
    let ids: Vec<Vec<&str>> = ranked.iter().map(|r| r.iter().map(|(id, _)| id.as_str()).collect()).collect();
    let mut strata = BTreeMap::new();
    for (name, members) in stratify(&qs) {
        let rk: Vec<Vec<&str>> = members.iter().map(|&i| ids[i].clone()).collect();
        let gt: Vec<Vec<String>> = members.iter().map(|&i| qs[i].gt_ids.clone()).collect();
        strata.insert(name, compute_metrics(&rk, &gt, opts.recall)?);
    }
    if !strata.contains_key("all/all") {
        strata.insert("all/all".into(), Metrics::default());
    }
    let rankings = opts.keep_rankings.then(|| {
        qs.iter()
            .zip(&ids)
            .map(|(q, r)| (q.id.clone(), r.iter().map(|s| s.to_string()).collect()))
            .collect()
    });
    Ok((ModeReport { counts, strata, rankings }, ranked, qs))
}

/// Evaluates every mode in `modes` and collects a report.
pub fn evaluate(
    scorer: &dyn Scorer,
    gallery: &Gallery,
    queries: &[Query],
    modes: &[ProtocolMode],
    opts: EvalOptions,
    config: serde_json::Value,
) -> Result<RunReport> {
    let mut out = BTreeMap::new();
    for &mode in modes {
        let (report, _, _) = evaluate_mode(scorer, gallery, queries, mode, opts)?;
        out.insert(mode.to_string(), report);
    }
    Ok(RunReport {
        scorer: scorer.name(),
        config,
        modes: out,
    })
}

/// Official-mode R@1 over the given queries.
pub fn official_r1(scorer: &dyn Scorer, gallery: &Gallery, queries: &[Query]) -> Result<f64> {
    let (r, _, _) = evaluate_mode(scorer, gallery, queries, ProtocolMode::OFFICIAL, EvalOptions::default())?;
    Ok(r.strata["all/all"].r1)
}

/// TREC run lines: `qid Q0 docid rank score tag`.
pub fn trec_run(queries: &[Query], ranked: &[Vec<(String, f64)>], tag: &str) -> String {
    let mut out = String::new();
    for (q, r) in queries.iter().zip(ranked) {
        for (rank, (id, score)) in r.iter().enumerate() {
            out.push_str(&format!("{} Q0 {} {} {:.6} {}\n", q.id, id, rank + 1, score, tag));
        }
    }
    out
}
