//! Calendar-aware scoring head on top of fixed embeddings.
//!
//! All trainable tensors live in one flat `f64` vector; [`Group`] names the
//! slices. Gradients use the same layout, so the optimizer and the
//! finite-difference checks work on plain slices.

mod loss;
mod model;

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calendar::CalendarManifest;
use crate::embed::ByteReader;
use crate::error::{Error, Result};

pub use loss::{
    loss_multi, loss_time, loss_total, loss_value, score_matrix, smoothed_target, Batch, LossConfig, LossValue, Smoothing,
};
pub use model::{fourier_features, soft_coords_and_u, softmax, ItemForward, MlpForward};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_TIME_DIM: usize = 32;
pub const DEFAULT_FOURIER_K: usize = 8;
pub const DEFAULT_MLP_HIDDEN: usize = 64;

const MAGIC: &[u8; 6] = b"CQCTD1";
const VERSION: u32 = 1;

/// Which score augmentations are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ScoreConfig {
    /// Add the gated sinusoidal calendar context to both sides.
    pub context: bool,
    /// Add the relative-offset bias term.
    pub bias: bool,
}

impl ScoreConfig {
    pub const SEM: Self = Self {
        context: false,
        bias: false,
    };
    pub const ABS: Self = Self {
        context: true,
        bias: false,
    };
    pub const CTD: Self = Self {
        context: true,
        bias: true,
    };
    pub const SEM_BIAS: Self = Self {
        context: false,
        bias: true,
    };

    pub fn name(self) -> &'static str {
        match (self.context, self.bias) {
            (false, false) => "sem",
            (true, false) => "abs",
            (true, true) => "ctd",
            (false, true) => "sem+bias",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtdDims {
    /// Embedding width.
    pub h: usize,
    pub g: usize,
    pub y: usize,
    pub m: usize,
    /// Codebook width per axis.
    pub d_t: usize,
    /// Number of Fourier octaves; the offset feature has `2k + 1` entries.
    pub k: usize,
    /// Hidden width of the bias MLP.
    pub h1: usize,
}

impl CtdDims {
    pub fn for_manifest(h: usize, manifest: &CalendarManifest) -> Self {
        Self {
            h,
            g: manifest.num_gongs as usize,
            y: manifest.max_years as usize,
            m: manifest.months_per_year as usize,
            d_t: DEFAULT_TIME_DIM,
            k: DEFAULT_FOURIER_K,
            h1: DEFAULT_MLP_HIDDEN,
        }
    }

    pub fn d_phi(&self) -> usize {
        2 * self.k + 1
    }

    pub fn axis(&self, r: usize) -> usize {
        [self.g, self.y, self.m][r]
    }

    fn check(&self) -> Result<()> {
        if self.h == 0 || self.g == 0 || self.y == 0 || self.m == 0 || self.h1 == 0 {
            return Err(Error::Config(format!("degenerate CTD dimensions {self:?}")));
        }
        if self.g * self.y * self.m < 2 {
            return Err(Error::Config("calendar grid needs at least two cells".into()));
        }
        if self.d_t < 2 || self.d_t % 2 != 0 {
            return Err(Error::Config(format!("codebook width must be even and >= 2, got {}", self.d_t)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Adapter,
    HeadG,
    BiasG,
    HeadY,
    BiasY,
    HeadM,
    BiasM,
    Context,
    Gate,
    Mlp1,
    MlpBias1,
    Mlp2,
    MlpBias2,
    Scale,
}

impl Group {
    pub const ALL: [Group; 14] = [
        Group::Adapter,
        Group::HeadG,
        Group::BiasG,
        Group::HeadY,
        Group::BiasY,
        Group::HeadM,
        Group::BiasM,
        Group::Context,
        Group::Gate,
        Group::Mlp1,
        Group::MlpBias1,
        Group::Mlp2,
        Group::MlpBias2,
        Group::Scale,
    ];

    /// Matrices receive decoupled weight decay; biases and scalars do not.
    pub fn is_matrix(self) -> bool {
        matches!(
            self,
            Group::Adapter | Group::HeadG | Group::HeadY | Group::HeadM | Group::Context | Group::Mlp1 | Group::Mlp2
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Adapter => "adapter",
            Group::HeadG => "head_g",
            Group::BiasG => "head_g.bias",
            Group::HeadY => "head_y",
            Group::BiasY => "head_y.bias",
            Group::HeadM => "head_m",
            Group::BiasM => "head_m.bias",
            Group::Context => "w_ctx",
            Group::Gate => "gamma",
            Group::Mlp1 => "mlp.w1",
            Group::MlpBias1 => "mlp.b1",
            Group::Mlp2 => "mlp.w2",
            Group::MlpBias2 => "mlp.b2",
            Group::Scale => "epsilon",
        }
    }

    fn size(self, d: &CtdDims) -> usize {
        match self {
            Group::Adapter => d.h * d.h,
            Group::HeadG => d.h * d.g,
            Group::BiasG => d.g,
            Group::HeadY => d.h * d.y,
            Group::BiasY => d.y,
            Group::HeadM => d.h * d.m,
            Group::BiasM => d.m,
            Group::Context => 3 * d.d_t * d.h,
            Group::Gate | Group::MlpBias2 | Group::Scale => 1,
            Group::Mlp1 => d.d_phi() * d.h1,
            Group::MlpBias1 | Group::Mlp2 => d.h1,
        }
    }

    pub(crate) fn head(r: usize) -> (Group, Group) {
        [(Group::HeadG, Group::BiasG), (Group::HeadY, Group::BiasY), (Group::HeadM, Group::BiasM)][r]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    ranges: Vec<Range<usize>>,
    len: usize,
}

impl Layout {
    pub fn new(dims: &CtdDims) -> Self {
        let mut ranges = Vec::with_capacity(Group::ALL.len());
        let mut at = 0;
        for g in Group::ALL {
            let n = g.size(dims);
            ranges.push(at..at + n);
            at += n;
        }
        Self { ranges, len: at }
    }

    pub fn range(&self, g: Group) -> Range<usize> {
        self.ranges[g as usize].clone()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Group owning flat index `i`.
    pub fn group_of(&self, i: usize) -> Group {
        Group::ALL[self.ranges.iter().position(|r| r.contains(&i)).expect("index in layout")]
    }
}

/// Sinusoidal position table, `n × d_t`, row-major.
pub fn sinusoidal_codebook(n: usize, d_t: usize) -> Result<Vec<f64>> {
    if d_t < 2 || d_t % 2 != 0 {
        return Err(Error::Config(format!("codebook width must be even and >= 2, got {d_t}")));
    }
    let mut e = vec![0.0; n * d_t];
    for i in 0..n {
        for k in 0..d_t / 2 {
            let angle = i as f64 / 10000f64.powf(2.0 * k as f64 / d_t as f64);
            e[i * d_t + 2 * k] = angle.sin();
            e[i * d_t + 2 * k + 1] = angle.cos();
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtdParams {
    dims: CtdDims,
    layout: Layout,
    /// Flat trainable parameters.
    pub theta: Vec<f64>,
    codebooks: [Vec<f64>; 3],
    /// Score temperature; fixed.
    pub alpha: f64,
    /// Fingerprint of the calendar the heads were built for.
    pub manifest_hash: u64,
}

impl CtdParams {
    /// Identity adapter, small random heads and MLP, `γ = ε = 0`.
    pub fn init(dims: CtdDims, alpha: f64, manifest_hash: u64, seed: u64) -> Result<Self> {
        dims.check()?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {alpha}")));
        }
        let layout = Layout::new(&dims);
        let mut theta = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |g: Group, std: f64, theta: &mut [f64]| {
            let normal = Normal::new(0.0, std).expect("valid std");
            for v in &mut theta[layout.range(g)] {
                *v = normal.sample(&mut rng);
            }
        };
        for g in [Group::HeadG, Group::HeadY, Group::HeadM, Group::Context] {
            fill(g, 0.02, &mut theta);
        }
        fill(Group::Mlp1, 1.0 / (dims.d_phi() as f64).sqrt(), &mut theta);
        fill(Group::Mlp2, 1.0 / (dims.h1 as f64).sqrt(), &mut theta);
        let a = layout.range(Group::Adapter).start;
        for i in 0..dims.h {
            theta[a + i * dims.h + i] = 1.0;
        }
        Self::from_parts(dims, theta, alpha, manifest_hash)
    }

    pub fn for_manifest(h: usize, manifest: &CalendarManifest, seed: u64) -> Result<Self> {
        Self::init(CtdDims::for_manifest(h, manifest), DEFAULT_ALPHA, manifest.fingerprint(), seed)
    }

    pub fn from_parts(dims: CtdDims, theta: Vec<f64>, alpha: f64, manifest_hash: u64) -> Result<Self> {
        dims.check()?;
        let layout = Layout::new(&dims);
        if theta.len() != layout.len() {
            return Err(Error::Consistency(format!(
                "parameter vector has {} entries, layout needs {}",
                theta.len(),
                layout.len()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {} is not finite", layout.group_of(i).name())));
        }
        let codebooks = [
            sinusoidal_codebook(dims.g, dims.d_t)?,
            sinusoidal_codebook(dims.y, dims.d_t)?,
            sinusoidal_codebook(dims.m, dims.d_t)?,
        ];
        Ok(Self {
            dims,
            layout,
            theta,
            codebooks,
            alpha,
            manifest_hash,
        })
    }

    pub fn dims(&self) -> &CtdDims {
        &self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn group(&self, g: Group) -> &[f64] {
        &self.theta[self.layout.range(g)]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [f64] {
        let r = self.layout.range(g);
        &mut self.theta[r]
    }

    pub fn codebook(&self, r: usize) -> &[f64] {
        &self.codebooks[r]
    }

    pub fn gamma(&self) -> f64 {
        self.group(Group::Gate)[0]
    }

    pub fn epsilon(&self) -> f64 {
        self.group(Group::Scale)[0]
    }

    pub fn set_gamma(&mut self, v: f64) {
        self.group_mut(Group::Gate)[0] = v;
    }

    pub fn set_epsilon(&mut self, v: f64) {
        self.group_mut(Group::Scale)[0] = v;
    }

    pub fn check_manifest(&self, manifest: &CalendarManifest) -> Result<()> {
        let dims = CtdDims::for_manifest(self.dims.h, manifest);
        if manifest.fingerprint() != self.manifest_hash || (dims.g, dims.y, dims.m) != (self.dims.g, self.dims.y, self.dims.m)
        {
            return Err(Error::Consistency(format!(
                "checkpoint was trained for manifest {:016x}, got {:016x}",
                self.manifest_hash,
                manifest.fingerprint()
            )));
        }
        Ok(())
    }
}

/// Trained parameters plus the score configuration they were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: CtdParams,
    pub score: ScoreConfig,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let d = &p.dims;
        let mut out = Vec::with_capacity(64 + p.theta.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [d.h, d.g, d.y, d.m, d.d_t, d.k, d.h1] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(self.score.context as u8);
        out.push(self.score.bias as u8);
        out.extend_from_slice(&p.alpha.to_le_bytes());
        out.extend_from_slice(&p.manifest_hash.to_le_bytes());
        out.extend_from_slice(&(p.theta.len() as u64).to_le_bytes());
        for v in &p.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "magic mismatch (expected CQCTD1)".into(),
            });
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let mut dim = [0usize; 7];
        for v in &mut dim {
            *v = r.u32()? as usize;
        }
        let [h, g, y, m, d_t, k, h1] = dim;
        let dims = CtdDims {
            h,
            g,
            y,
            m,
            d_t,
            k,
            h1,
        };
        let flags = r.take(2)?;
        let score = ScoreConfig {
            context: flags[0] != 0,
            bias: flags[1] != 0,
        };
        let alpha = r.f64()?;
        let manifest_hash = r.u64()?;
        let at = r.pos;
        let n = r.u64()? as usize;
        if n != Layout::new(&dims).len() {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("parameter count {n} does not match the stored dimensions"),
            });
        }
        let mut theta = Vec::with_capacity(n);
        for _ in 0..n {
            theta.push(r.f64()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: "trailing bytes after parameters".into(),
            });
        }
        Ok(Self {
            params: CtdParams::from_parts(dims, theta, alpha, manifest_hash)?,
            score,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Loads a checkpoint and rejects it unless it was built for `manifest`.
    pub fn load(path: &Path, manifest: &CalendarManifest) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ckpt = Self::from_bytes(&bytes)?;
        ckpt.params.check_manifest(manifest)?;
        Ok(ckpt)
    }
}
