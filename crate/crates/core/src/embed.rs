//! Fixed text embeddings.
//!
//! Real corpora consume vectors exported by an external encoder through the
//! `CQEMB1` binary format. For self-contained runs, [`hash_encode`] produces a
//! deterministic character n-gram embedding: unigrams and bigrams are
//! FNV-1a hashed into buckets, each bucket is projected through a seeded
//! ±1 sign matrix into `R^H`, and the sum is scaled by `1/√nnz`.
//!
//! File layout (little-endian):
//!
//! ```text
//! "CQEMB1" | H: u32 | count: u32 | count × (len: u32, utf-8 id) | count × H × f32
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lexical::tokenize;

pub const MAGIC: &[u8; 6] = b"CQEMB1";
const BUCKETS: u64 = 1 << 20;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_from(FNV_OFFSET, bytes)
}

fn fnv1a64_from(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Bucket of an n-gram: FNV-1a over the seed (8 bytes LE) followed by the UTF-8 bytes.
fn bucket(gram: &str, seed: u64) -> u64 {
    let state = fnv1a64_from(FNV_OFFSET, &seed.to_le_bytes());
    fnv1a64_from(state, gram.as_bytes()) % BUCKETS
}

/// Sign of row `bucket`, column `col` of the projection matrix.
fn sign(bucket: u64, col: usize, seed: u64) -> f64 {
    let word = splitmix64(seed ^ splitmix64(bucket.wrapping_mul(0x1_0000) + (col as u64 >> 6)));
    if (word >> (col & 63)) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Deterministic embedding of `text` into `R^dim`. Empty text maps to the
/// zero vector. When `normalize` is set the result has unit L2 norm.
pub fn hash_encode(text: &str, dim: usize, seed: u64, normalize: bool) -> Result<Vec<f32>> {
    if dim < 8 {
        return Err(Error::Config(format!("embedding dimension {dim} is below 8")));
    }
    let mut counts: BTreeMap<u64, u32> = BTreeMap::new();
    for gram in tokenize(text) {
        *counts.entry(bucket(&gram, seed)).or_default() += 1;
    }
    if counts.is_empty() {
        log::warn!("hash_encode: empty text maps to the zero vector");
        return Ok(vec![0.0; dim]);
    }
    let mut v = vec![0.0f64; dim];
    for (&b, &c) in &counts {
        for (col, x) in v.iter_mut().enumerate() {
            *x += c as f64 * sign(b, col, seed);
        }
    }
    let scale = 1.0 / (counts.len() as f64).sqrt();
    v.iter_mut().for_each(|x| *x *= scale);
    if normalize {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(v.into_iter().map(|x| x as f32).collect())
}

/// Dense vectors keyed by text id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Config(format!(
                "vector for {id:?} has {} entries, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding {id:?} contains {bad}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Row widened to f64.
    pub fn get_f64(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id).map(|v| v.iter().map(|&x| x as f64).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "magic mismatch (expected CQEMB1)".into(),
            });
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.pos;
            let raw = r.take(len)?;
            let id = std::str::from_utf8(raw).map_err(|_| Error::Format {
                offset: at as u64,
                message: "id is not valid UTF-8".into(),
            })?;
            ids.push(id.to_string());
        }
        let rows_start = r.pos;
        let remaining = bytes.len() - rows_start;
        let expected = count * dim * 4;
        if remaining != expected {
            return Err(Error::Format {
                offset: rows_start as u64,
                message: format!(
                    "row block holds {remaining} bytes but header H={dim}, count={count} requires {expected}"
                ),
            });
        }
        let mut matrix = Self::new(dim);
        for (i, id) in ids.into_iter().enumerate() {
            let row: Vec<f32> = (0..dim)
                .map(|c| {
                    let at = rows_start + (i * dim + c) * 4;
                    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
                })
                .collect();
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format {
                    offset: (rows_start + i * dim * 4) as u64,
                    message: format!("row {id:?} contains non-finite values"),
                });
            }
            matrix.push(id, &row)?;
        }
        Ok(matrix)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Rescales every row to unit L2 norm (zero rows stay zero).
    pub fn normalize_rows(&mut self) {
        for row in self.data.chunks_mut(self.dim.max(1)) {
            let norm = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
            }
        }
    }
}

/// Loads embeddings from `path` and applies row normalization unless disabled.
pub fn load_embeddings(path: &Path, normalize: bool) -> Result<EmbeddingMatrix> {
    let mut m = EmbeddingMatrix::load(path)?;
    if normalize {
        m.normalize_rows();
    }
    Ok(m)
}

/// Encodes every `(id, text)` pair with [`hash_encode`].
pub fn encode_all<'a, I>(items: I, dim: usize, seed: u64) -> Result<EmbeddingMatrix>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut m = EmbeddingMatrix::new(dim);
    for (id, text) in items {
        m.push(id, &hash_encode(text, dim, seed, true)?)?;
    }
    Ok(m)
}

pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
