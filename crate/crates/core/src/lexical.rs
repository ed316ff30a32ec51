//! BM25 over character n-grams and the TimeKDE temporal re-ranking prior.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::corpus::Gallery;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 6] = b"CQIDX1";

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '，' | '。' | '、' | '；' | '：' | '？' | '！' | '「' | '」' | '『' | '』' | '《' | '》'
                | '〈' | '〉' | '（' | '）' | '…' | '—' | '·' | '“' | '”' | '‘' | '’' | '【' | '】'
                | '〔' | '〕' | '～'
        )
}

/// Characters of `text` with whitespace and punctuation removed.
pub fn normalize(text: &str) -> String {
    text.chars()
        .filter(|&c| !c.is_whitespace() && !is_punctuation(c) && !c.is_control())
        .collect()
}

/// Character unigrams followed by character bigrams of the normalized text.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = normalize(text).chars().collect();
    let mut out: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    out.extend(chars.windows(2).map(|w| w.iter().collect::<String>()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    fn check(&self) -> Result<()> {
        if !(self.k1 > 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "BM25 needs k1 > 0 and 0 ≤ b ≤ 1 (got k1={}, b={})",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

/// Inverted index with postings sorted by document ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    avgdl: f64,
}

impl InvertedIndex {
    pub fn build<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (ord, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_ids.push(id.to_string());
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push((ord as u32, n));
            }
        }
        let avgdl = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64
        };
        Self {
            doc_ids,
            doc_len,
            postings,
            avgdl,
        }
    }

    pub fn from_gallery(gallery: &Gallery) -> Self {
        Self::build(gallery.records().iter().map(|r| (r.id.as_str(), r.text.as_str())))
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, ord: usize) -> &str {
        &self.doc_ids[ord]
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn postings(&self, term: &str) -> Option<&[(u32, u32)]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    /// `ln((N − df + 0.5)/(df + 0.5) + 1)`.
    pub fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 score of every document, indexed by document ordinal. Each
    /// distinct query term contributes once.
    pub fn score_all(&self, query: &str, params: Bm25Params) -> Result<Vec<f64>> {
        params.check()?;
        let mut scores = vec![0.0; self.num_docs()];
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let tf = tf as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * self.doc_len[doc as usize] as f64 / self.avgdl);
                scores[doc as usize] += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
        }
        Ok(scores)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, self.doc_ids.len() as u32);
        for (id, len) in self.doc_ids.iter().zip(&self.doc_len) {
            put_str(&mut out, id);
            put_u32(&mut out, *len);
        }
        put_u32(&mut out, self.postings.len() as u32);
        for (term, list) in &self.postings {
            put_str(&mut out, term);
            put_u32(&mut out, list.len() as u32);
            for &(doc, tf) in list {
                put_u32(&mut out, doc);
                put_u32(&mut out, tf);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6)? != INDEX_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "magic mismatch (expected CQIDX1)".into(),
            });
        }
        let n = r.u32()? as usize;
        let mut doc_ids = Vec::with_capacity(n.min(1 << 20));
        let mut doc_len = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            doc_ids.push(r.string()?);
            doc_len.push(r.u32()?);
        }
        let terms = r.u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = r.string()?;
            let len = r.u32()? as usize;
            let mut list = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                let at = r.pos;
                let doc = r.u32()?;
                if doc as usize >= n {
                    return Err(Error::Format {
                        offset: at as u64,
                        message: format!("posting references document {doc} of {n}"),
                    });
                }
                list.push((doc, r.u32()?));
            }
            postings.insert(term, list);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: "trailing bytes after index".into(),
            });
        }
        let avgdl = if n == 0 {
            0.0
        } else {
            doc_len.iter().map(|&l| l as f64).sum::<f64>() / n as f64
        };
        Ok(Self {
            doc_ids,
            doc_len,
            postings,
            avgdl,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated: needed {n} bytes"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            message: "invalid UTF-8".into(),
        })
    }
}

/// Sorts `(id, score)` pairs by descending score, ties by ascending id.
pub fn sort_hits(hits: &mut [(String, f64)]) {
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Top-`top_n` BM25 hits with a positive score.
pub fn bm25_search(index: &InvertedIndex, query: &str, params: Bm25Params, top_n: usize) -> Result<Vec<(String, f64)>> {
    let scores = index.score_all(query, params)?;
    let mut hits: Vec<(String, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > 0.0)
        .map(|(i, s)| (index.doc_id(i).to_string(), s))
        .collect();
    sort_hits(&mut hits);
    hits.truncate(top_n);
    Ok(hits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeKdeParams {
    /// Kernel bandwidth in months.
    pub bandwidth: f64,
    /// Weight of the log-density term.
    pub weight: f64,
    /// Number of top lexical hits the density is fitted on.
    pub top_k_fit: usize,
}

impl Default for TimeKdeParams {
    fn default() -> Self {
        Self {
            bandwidth: 3.0,
            weight: 0.5,
            top_k_fit: 20,
        }
    }
}

const KDE_DELTA: f64 = 1e-9;

/// Score-weighted Gaussian density over month ordinals.
#[derive(Debug, Clone)]
pub struct MonthDensity {
    centers: Vec<(f64, f64)>,
    bandwidth: f64,
}

impl MonthDensity {
    /// Fits on `(ordinal, score)` pairs; weights are scores normalized to sum
    /// to one, falling back to uniform weights when no score is positive.
    pub fn fit(points: &[(u64, f64)], bandwidth: f64) -> Self {
        let total: f64 = points.iter().map(|p| p.1.max(0.0)).sum();
        let centers = points
            .iter()
            .map(|&(o, s)| {
                let w = if total > 0.0 {
                    s.max(0.0) / total
                } else {
                    1.0 / points.len() as f64
                };
                (o as f64, w)
            })
            .collect();
        Self { centers, bandwidth }
    }

    pub fn density(&self, ordinal: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        self.centers
            .iter()
            .map(|&(c, w)| w * norm * (-(ordinal - c).powi(2) / (2.0 * h * h)).exp())
            .sum()
    }
}

/// Re-ranks lexical hits by `s + w·ln(density(ordinal) + δ)`, where the
/// density is fitted over the month ordinals of the top hits. The output is a
/// permutation of `ranked`.
pub fn timekde_rerank(ranked: &[(String, f64)], gallery: &Gallery, params: TimeKdeParams) -> Result<Vec<(String, f64)>> {
    if !(params.bandwidth > 0.0) {
        return Err(Error::Config(format!("TimeKDE bandwidth must be positive, got {}", params.bandwidth)));
    }
    let ordinal = |id: &str| -> Result<u64> {
        let rec = gallery
            .get(id)
            .ok_or_else(|| Error::Consistency(format!("ranked id {id:?} is not in the gallery")))?;
        gallery.manifest().key_to_ordinal(&rec.key())
    };
    if ranked.len() < 2 || params.weight == 0.0 {
        return Ok(ranked.to_vec());
    }
    let fit: Vec<(u64, f64)> = ranked
        .iter()
        .take(params.top_k_fit.max(1))
        .map(|(id, s)| Ok((ordinal(id)?, *s)))
        .collect::<Result<_>>()?;
    let ordinals: Vec<u64> = ranked.iter().map(|(id, _)| ordinal(id)).collect::<Result<_>>()?;
    if ordinals.iter().all(|&o| o == ordinals[0]) {
        log::warn!("timekde: all candidates share one month; keeping the lexical ranking");
        return Ok(ranked.to_vec());
    }
    let density = MonthDensity::fit(&fit, params.bandwidth);
    let mut out: Vec<(String, f64)> = ranked
        .iter()
        .zip(&ordinals)
        .map(|((id, s), &o)| (id.clone(), s + params.weight * (density.density(o as f64) + KDE_DELTA).ln()))
        .collect();
    sort_hits(&mut out);
    Ok(out)
}

/// Exhaustive BM25 that re-tokenizes every document per query.
#[doc(hidden)]
pub fn bm25_brute_force(docs: &[(&str, &str)], query: &str, params: Bm25Params) -> Vec<f64> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokenize(t)).collect();
    let n = docs.len() as f64;
    let avgdl = tokenized.iter().map(|t| t.len() as f64).sum::<f64>() / n;
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for term in &terms {
        df.insert(term, tokenized.iter().filter(|d| d.contains(term)).count());
    }
    tokenized
        .iter()
        .map(|doc| {
            terms
                .iter()
                .map(|term| {
                    let tf = doc.iter().filter(|t| *t == term).count() as f64;
                    if tf == 0.0 {
                        return 0.0;
                    }
                    let d = df[term.as_str()] as f64;
                    let idf = ((n - d + 0.5) / (d + 0.5) + 1.0).ln();
                    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * doc.len() as f64 / avgdl))
                })
                .sum()
        })
        .collect()
}
