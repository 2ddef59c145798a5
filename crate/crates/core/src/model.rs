//! The two-branch sparse-to-dense network.
//!
//! Input is the measured log-magnitude tensor `X: [M, 2, F]` (or a batch
//! `[B, M, 2, F]`); output is the dense estimate `[D, 2, F]`.
//!
//! * The spatial branch maps, at every bin, the `2M` measured values through
//!   one affine map shared by all bins to `2D` values.
//! * The frequency branch forms the binaural representation
//!   `[L₁…L_M, R₁…R_M, (L−R)₁…(L−R)_M]` per bin, projects it to `C`
//!   channels, optionally adds a learned per-bin embedding, runs a variant
//!   core over the `F × C` sequence and expands every bin to `2D` values
//!   with a two-layer head.
//! * The output is the elementwise sum of both branches.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kv::{join, KvDoc, KvError};
use crate::nn::layers::{DepthwiseConv1d, LayerNorm, Linear, MultiHeadSelfAttention, PositionalEmbedding};
use crate::nn::{NnError, ParamStore, Real, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(#[from] KvError),
    #[error("invalid model config: {0}")]
    Invalid(String),
    #[error("input shape {got:?} does not match config (expected [.., {m}, 2, {f}])")]
    Shape { got: Vec<usize>, m: usize, f: usize },
    #[error("parameters do not match the architecture: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    SpatialOnly,
    PerFreqMlp,
    VanillaConv,
    DilatedConv,
    Conformer,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::SpatialOnly, Variant::PerFreqMlp, Variant::VanillaConv, Variant::DilatedConv, Variant::Conformer];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SpatialOnly => "spatial_only",
            Variant::PerFreqMlp => "per_freq_mlp",
            Variant::VanillaConv => "vanilla_conv",
            Variant::DilatedConv => "dilated_conv",
            Variant::Conformer => "conformer",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected one of {})", join(&Variant::ALL)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub m: usize,
    pub d: usize,
    pub f: usize,
    pub variant: Variant,
    pub channels: usize,
    pub n_blocks: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    /// Conformer only: include the convolution stage.
    pub use_conv: bool,
    /// Conformer only: add the learned per-bin embedding.
    pub use_posenc: bool,
    /// Per-block dilations of the dilated variant, cycled over blocks.
    pub dilations: Vec<usize>,
}

pub const CONFIG_KEYS: [&str; 14] = [
    "m",
    "d",
    "f",
    "variant",
    "channels",
    "n_blocks",
    "heads",
    "ffn_dim",
    "conv_kernel",
    "head_hidden",
    "dropout",
    "use_conv",
    "use_posenc",
    "dilations",
];

impl ModelConfig {
    pub fn new(m: usize, d: usize, f: usize, variant: Variant) -> Self {
        Self {
            m,
            d,
            f,
            variant,
            channels: 128,
            n_blocks: 4,
            heads: 8,
            ffn_dim: 256,
            conv_kernel: 7,
            head_hidden: 256,
            dropout: 0.1,
            use_conv: true,
            use_posenc: true,
            dilations: vec![1, 2, 4, 8],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Invalid(msg));
        if self.m == 0 || self.m >= self.d {
            return bad(format!("need 1 <= m < d, got m = {}, d = {}", self.m, self.d));
        }
        if self.f == 0 {
            return bad("f must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.variant != Variant::Conformer && !(self.use_conv && self.use_posenc) {
            return bad(format!("use_conv/use_posenc apply to the conformer variant only, not {}", self.variant));
        }
        if self.variant == Variant::SpatialOnly {
            return Ok(());
        }
        if self.channels == 0 || self.n_blocks == 0 || self.ffn_dim == 0 || self.head_hidden == 0 {
            return bad("channels, n_blocks, ffn_dim and head_hidden must be >= 1".into());
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if self.variant == Variant::DilatedConv && (self.dilations.is_empty() || self.dilations.contains(&0)) {
            return bad(format!("dilations must be non-empty and >= 1, got {:?}", self.dilations));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("m", self.m.to_string());
        put("d", self.d.to_string());
        put("f", self.f.to_string());
        put("variant", self.variant.to_string());
        put("channels", self.channels.to_string());
        put("n_blocks", self.n_blocks.to_string());
        put("heads", self.heads.to_string());
        put("ffn_dim", self.ffn_dim.to_string());
        put("conv_kernel", self.conv_kernel.to_string());
        put("head_hidden", self.head_hidden.to_string());
        put("dropout", format!("{:?}", self.dropout));
        put("use_conv", self.use_conv.to_string());
        put("use_posenc", self.use_posenc.to_string());
        put("dilations", join(&self.dilations));
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(&CONFIG_KEYS)?;
        Self::from_doc(&doc, None)
    }

    /// Reads the config keys from `doc`. `m`, `d`, `f` and `variant` may be
    /// supplied through `shape` when the document omits them.
    pub fn from_doc(doc: &KvDoc, shape: Option<(usize, usize, usize, Variant)>) -> Result<Self, ModelError> {
        let (m, d, f, variant) = match shape {
            Some((m, d, f, v)) => (doc.get_or("m", m)?, doc.get_or("d", d)?, doc.get_or("f", f)?, doc.get_or("variant", v)?),
            None => (doc.require("m")?, doc.require("d")?, doc.require("f")?, doc.get_or("variant", Variant::Conformer)?),
        };
        let base = Self::new(m, d, f, variant);
        let cfg = Self {
            channels: doc.get_or("channels", base.channels)?,
            n_blocks: doc.get_or("n_blocks", base.n_blocks)?,
            heads: doc.get_or("heads", base.heads)?,
            ffn_dim: doc.get_or("ffn_dim", base.ffn_dim)?,
            conv_kernel: doc.get_or("conv_kernel", base.conv_kernel)?,
            head_hidden: doc.get_or("head_hidden", base.head_hidden)?,
            dropout: doc.get_or("dropout", base.dropout)?,
            use_conv: doc.get_or("use_conv", base.use_conv)?,
            use_posenc: doc.get_or("use_posenc", base.use_posenc)?,
            dilations: doc.get_list("dilations")?.unwrap_or(base.dilations.clone()),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parameter count of the architecture, from the config alone.
    pub fn n_params(&self) -> usize {
        let (m, d, f, c, h) = (self.m, self.d, self.f, self.channels, self.head_hidden);
        let lin = |i: usize, o: usize| i * o + o;
        let ln = 2 * c;
        let spatial = lin(2 * m, 2 * d);
        if self.variant == Variant::SpatialOnly {
            return spatial;
        }
        let ffn = ln + lin(c, self.ffn_dim) + lin(self.ffn_dim, c);
        let dw = c * self.conv_kernel + c;
        let block = match self.variant {
            Variant::SpatialOnly => unreachable!(),
            Variant::PerFreqMlp => ffn,
            Variant::VanillaConv | Variant::DilatedConv => ln + dw + lin(c, c),
            Variant::Conformer => {
                let mhsa = ln + 4 * lin(c, c);
                let conv = if self.use_conv { ln + lin(c, 2 * c) + dw + ln + lin(c, c) } else { 0 };
                2 * ffn + mhsa + conv + ln
            }
        };
        let posenc = if self.use_posenc { f * c } else { 0 };
        spatial + lin(3 * m, c) + posenc + self.n_blocks * block + lin(c, h) + lin(h, 2 * d)
    }
}

/// Binaural representation `[3M, F]` of one `[M, 2, F]` input.
pub fn binaural_repr(x: ArrayView3<'_, f64>) -> Array2<f64> {
    let (m, _, f) = x.dim();
    Array2::from_shape_fn((3 * m, f), |(r, k)| match r / m {
        0 => x[[r, 0, k]],
        1 => x[[r - m, 1, k]],
        _ => x[[r - 2 * m, 0, k]] - x[[r - 2 * m, 1, k]],
    })
}

/// `[3M, 2M]` matrix taking the per-bin input vector (ordered measured
/// direction major, ear minor) to the binaural representation.
fn binaural_matrix<T: Real>(m: usize) -> Vec<T> {
    let mut a = vec![T::zero(); 3 * m * 2 * m];
    for i in 0..m {
        a[i * 2 * m + 2 * i] = T::one();
        a[(m + i) * 2 * m + 2 * i + 1] = T::one();
        a[(2 * m + i) * 2 * m + 2 * i] = T::one();
        a[(2 * m + i) * 2 * m + 2 * i + 1] = -T::one();
    }
    a
}

/// Initialization stream of one module: parameters that share a name get
/// the same initial values across architectures built from one seed.
fn module_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        hash = (hash ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(hash);
    rng
}

fn linear<T: Real>(store: &mut ParamStore<T>, seed: u64, name: &str, i: usize, o: usize) -> Linear {
    Linear::new(store, name, i, o, true, &mut module_rng(seed, name))
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    norm: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl FeedForward {
    fn new<T: Real>(store: &mut ParamStore<T>, seed: u64, name: &str, c: usize, hidden: usize) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
            fc1: linear(store, seed, &format!("{name}.fc1"), c, hidden),
            fc2: linear(store, seed, &format!("{name}.fc2"), hidden, c),
        }
    }

    /// `fc2(dropout(swish(fc1(LN x))))`, followed by dropout.
    fn forward<T: Real>(&self, tape: &mut Tape<T>, s: &ParamStore<T>, x: Var, p: f64) -> Result<Var, NnError> {
        let h = self.norm.forward(tape, s, x)?;
        let h = self.fc1.forward(tape, s, h)?;
        let h = tape.swish(h);
        let h = tape.dropout(h, p)?;
        let h = self.fc2.forward(tape, s, h)?;
        tape.dropout(h, p)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvModule {
    norm: LayerNorm,
    expand: Linear,
    depthwise: DepthwiseConv1d,
    mid_norm: LayerNorm,
    project: Linear,
}

impl ConvModule {
    fn new<T: Real>(store: &mut ParamStore<T>, seed: u64, name: &str, c: usize, k: usize) -> Self {
        let dw_name = format!("{name}.depthwise");
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
            expand: linear(store, seed, &format!("{name}.expand"), c, 2 * c),
            depthwise: DepthwiseConv1d::new(store, &dw_name, c, k, 1, &mut module_rng(seed, &dw_name)),
            mid_norm: LayerNorm::new(store, &format!("{name}.mid_norm"), c),
            project: linear(store, seed, &format!("{name}.project"), c, c),
        }
    }

    /// `LN → pointwise C→2C → GLU → depthwise → LN → swish → pointwise → dropout`.
    fn forward<T: Real>(&self, tape: &mut Tape<T>, s: &ParamStore<T>, x: Var, p: f64) -> Result<Var, NnError> {
        let h = self.norm.forward(tape, s, x)?;
        let h = self.expand.forward(tape, s, h)?;
        let h = tape.glu(h)?;
        let h = self.depthwise.forward(tape, s, h)?;
        let h = self.mid_norm.forward(tape, s, h)?;
        let h = tape.swish(h);
        let h = self.project.forward(tape, s, h)?;
        tape.dropout(h, p)
    }
}

/// Macaron block: half-step feed-forward, self-attention, optional
/// convolution, half-step feed-forward, each residual and pre-normalized,
/// then a final layer normalization.
#[derive(Debug, Clone, Copy)]
pub struct ConformerBlock {
    ffn1: FeedForward,
    attn_norm: LayerNorm,
    attn: MultiHeadSelfAttention,
    conv: Option<ConvModule>,
    ffn2: FeedForward,
    out_norm: LayerNorm,
    dropout: f64,
}

impl ConformerBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, seed: u64, name: &str, cfg: &ModelConfig) -> Result<Self, ModelError> {
        let c = cfg.channels;
        let attn_name = format!("{name}.attn");
        Ok(Self {
            ffn1: FeedForward::new(store, seed, &format!("{name}.ffn1"), c, cfg.ffn_dim),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), c),
            attn: MultiHeadSelfAttention::new(store, &attn_name, c, cfg.heads, &mut module_rng(seed, &attn_name))?,
            conv: cfg.use_conv.then(|| ConvModule::new(store, seed, &format!("{name}.conv"), c, cfg.conv_kernel)),
            ffn2: FeedForward::new(store, seed, &format!("{name}.ffn2"), c, cfg.ffn_dim),
            out_norm: LayerNorm::new(store, &format!("{name}.out_norm"), c),
            dropout: cfg.dropout,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let p = self.dropout;
        let half = T::of(0.5);
        let f = self.ffn1.forward(tape, s, x, p)?;
        let f = tape.scale(f, half);
        let h1 = tape.add(x, f)?;
        let a = self.attn_norm.forward(tape, s, h1)?;
        let a = self.attn.forward(tape, s, a)?;
        let a = tape.dropout(a, p)?;
        let h2 = tape.add(h1, a)?;
        let h3 = match &self.conv {
            Some(conv) => {
                let c = conv.forward(tape, s, h2, p)?;
                tape.add(h2, c)?
            }
            None => h2,
        };
        let f = self.ffn2.forward(tape, s, h3, p)?;
        let f = tape.scale(f, half);
        let h4 = tape.add(h3, f)?;
        self.out_norm.forward(tape, s, h4)
    }
}

/// `x + dropout(swish(pointwise(depthwise(LN x))))`.
#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    norm: LayerNorm,
    depthwise: DepthwiseConv1d,
    pointwise: Linear,
}

#[derive(Debug, Clone)]
enum Core {
    /// `x + dropout(FFN(x))` per block, with the FFN applied per bin.
    Mlp(Vec<FeedForward>),
    Conv(Vec<ConvBlock>),
    Conformer(Vec<ConformerBlock>),
}

#[derive(Debug, Clone)]
struct FreqBranch {
    proj: Linear,
    posenc: Option<PositionalEmbedding>,
    core: Core,
    head1: Linear,
    head2: Linear,
}

/// Tape handles of one forward pass. `spatial`, `freq` and `output` are
/// shaped like the dense estimate; `latent` is the `[.., F, C]` sequence
/// entering the expansion head.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub spatial: Var,
    pub freq: Option<Var>,
    pub output: Var,
    pub latent: Option<Var>,
}

/// Dense estimates of one subject, `[D, 2, F]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub spatial: Array3<f64>,
    pub freq: Option<Array3<f64>>,
    pub output: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct FdModel {
    cfg: ModelConfig,
    spatial: Linear,
    freq: Option<FreqBranch>,
}

impl FdModel {
    /// Builds the architecture and its freshly initialized parameters.
    pub fn new<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>), ModelError> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let (m, d, c) = (cfg.m, cfg.d, cfg.channels);
        let spatial = linear(&mut s, seed, "spatial", 2 * m, 2 * d);
        let freq = if cfg.variant == Variant::SpatialOnly {
            None
        } else {
            let proj = linear(&mut s, seed, "freq.proj", 3 * m, c);
            let posenc = cfg
                .use_posenc
                .then(|| PositionalEmbedding::new(&mut s, "freq.posenc", cfg.f, c, &mut module_rng(seed, "freq.posenc")));
            let core = match cfg.variant {
                Variant::SpatialOnly => unreachable!(),
                Variant::PerFreqMlp => Core::Mlp(
                    (0..cfg.n_blocks)
                        .map(|i| FeedForward::new(&mut s, seed, &format!("freq.blocks.{i}"), c, cfg.ffn_dim))
                        .collect(),
                ),
                Variant::VanillaConv | Variant::DilatedConv => Core::Conv(
                    (0..cfg.n_blocks)
                        .map(|i| {
                            let dilation = match cfg.variant {
                                Variant::DilatedConv => cfg.dilations[i % cfg.dilations.len()],
                                _ => 1,
                            };
                            let name = format!("freq.blocks.{i}");
                            let dw_name = format!("{name}.depthwise");
                            ConvBlock {
                                norm: LayerNorm::new(&mut s, &format!("{name}.norm"), c),
                                depthwise: DepthwiseConv1d::new(
                                    &mut s,
                                    &dw_name,
                                    c,
                                    cfg.conv_kernel,
                                    dilation,
                                    &mut module_rng(seed, &dw_name),
                                ),
                                pointwise: linear(&mut s, seed, &format!("{name}.pointwise"), c, c),
                            }
                        })
                        .collect(),
                ),
                Variant::Conformer => Core::Conformer(
                    (0..cfg.n_blocks)
                        .map(|i| ConformerBlock::new(&mut s, seed, &format!("freq.blocks.{i}"), cfg))
                        .collect::<Result<_, _>>()?,
                ),
            };
            let head1 = linear(&mut s, seed, "freq.head.fc1", c, cfg.head_hidden);
            let head2 = linear(&mut s, seed, "freq.head.fc2", cfg.head_hidden, 2 * d);
            Some(FreqBranch { proj, posenc, core, head1, head2 })
        };
        debug_assert_eq!(s.n_scalars(), cfg.n_params());
        Ok((Self { cfg: cfg.clone(), spatial, freq }, s))
    }

    /// Rebuilds the architecture for `cfg` and checks that `store` holds
    /// parameters with the expected names and shapes, in order.
    pub fn attach<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Self, ModelError> {
        let (model, fresh) = Self::new::<T>(cfg, 0)?;
        if fresh.len() != store.len() {
            return Err(ModelError::ParamMismatch(format!("expected {} tensors, found {}", fresh.len(), store.len())));
        }
        for ((n1, t1), (n2, t2)) in fresh.iter().zip(store.iter()) {
            if n1 != n2 || t1.shape != t2.shape {
                return Err(ModelError::ParamMismatch(format!("expected {n1} {:?}, found {n2} {:?}", t1.shape, t2.shape)));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Records a forward pass for `x: [M, 2, F]` or `[B, M, 2, F]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<ForwardTrace, ModelError> {
        let (m, d, f) = (self.cfg.m, self.cfg.d, self.cfg.f);
        let shape = tape.shape(x).to_vec();
        let batch = match shape.as_slice() {
            [mm, 2, ff] if *mm == m && *ff == f => None,
            [b, mm, 2, ff] if *mm == m && *ff == f => Some(*b),
            _ => return Err(ModelError::Shape { got: shape, m, f }),
        };
        let b = batch.unwrap_or(1);
        let out_shape: Vec<usize> = match batch {
            Some(b) => vec![b, d, 2, f],
            None => vec![d, 2, f],
        };
        let x = tape.reshape(x, &[b, 2 * m, f])?;
        let per_bin = tape.transpose(x)?;

        let sp = self.spatial.forward(tape, s, per_bin)?;
        let sp = tape.transpose(sp)?;
        let spatial = tape.reshape(sp, &out_shape)?;

        let Some(fb) = &self.freq else {
            return Ok(ForwardTrace { spatial, freq: None, output: spatial, latent: None });
        };
        let a = tape.input(&[3 * m, 2 * m], binaural_matrix(m));
        let srep = tape.linear(per_bin, a, None)?;
        let mut h = fb.proj.forward(tape, s, srep)?;
        if let Some(pe) = &fb.posenc {
            h = pe.forward(tape, s, h)?;
        }
        let p = self.cfg.dropout;
        match &fb.core {
            Core::Mlp(blocks) => {
                for blk in blocks {
                    let y = blk.forward(tape, s, h, p)?;
                    h = tape.add(h, y)?;
                }
            }
            Core::Conv(blocks) => {
                for blk in blocks {
                    let y = blk.norm.forward(tape, s, h)?;
                    let y = blk.depthwise.forward(tape, s, y)?;
                    let y = blk.pointwise.forward(tape, s, y)?;
                    let y = tape.swish(y);
                    let y = tape.dropout(y, p)?;
                    h = tape.add(h, y)?;
                }
            }
            Core::Conformer(blocks) => {
                for blk in blocks {
                    h = blk.forward(tape, s, h)?;
                }
            }
        }
        let latent = h;
        let y = fb.head1.forward(tape, s, latent)?;
        let y = tape.swish(y);
        let y = fb.head2.forward(tape, s, y)?;
        let y = tape.transpose(y)?;
        let freq = tape.reshape(y, &out_shape)?;
        let output = tape.add(spatial, freq)?;
        Ok(ForwardTrace { spatial, freq: Some(freq), output, latent: Some(latent) })
    }

    /// Inference-mode prediction for one subject's `[M, 2, F]` input.
    pub fn predict<T: Real>(&self, s: &ParamStore<T>, x: ArrayView3<'_, f64>) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new(false, 0);
        let xv = tape.input(&[x.dim().0, x.dim().1, x.dim().2], x.iter().map(|v| T::of(*v)).collect());
        let tr = self.forward(&mut tape, s, xv)?;
        tape.check_finite()?;
        let dim = (self.cfg.d, 2, self.cfg.f);
        let grab = |v: Var| Array3::from_shape_vec(dim, tape.value(v).iter().map(|x| x.f64()).collect()).expect("shape");
        Ok(Prediction { spatial: grab(tr.spatial), freq: tr.freq.map(grab), output: grab(tr.output) })
    }
}
