//! Parameterized layers. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`] and records its forward pass on a [`Tape`].

use rand::Rng;

use super::tape::{NnError, Tape, Var};
use super::tensor::{ParamId, ParamStore, Real, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const EMBEDDING_INIT_STD: f64 = 0.02;

fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), Tensor::randn(&[out_dim, in_dim], fan_in_std(in_dim), rng));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Per-channel 1-D convolution with kernel `[C, k]` and dilation.
#[derive(Debug, Clone, Copy)]
pub struct DepthwiseConv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub dilation: usize,
}

impl DepthwiseConv1d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), Tensor::randn(&[channels, kernel], fan_in_std(kernel), rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[channels]));
        Self { w, b, kernel, dilation }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.depthwise_conv1d(x, w, b, self.dilation)
    }

    /// Number of sequence positions on each side that influence one output.
    pub fn reach(&self) -> usize {
        (self.kernel - 1) / 2 * self.dilation
    }
}

/// Dense 1-D convolution with kernel `[C_out, C_in, k]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[out_ch, in_ch, kernel], fan_in_std(in_ch * kernel), rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self { w, b, dilation }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv1d(x, w, b, self.dilation)
    }
}

/// Learnable `[F, C]` table added to every sequence in a batch.
#[derive(Debug, Clone, Copy)]
pub struct PositionalEmbedding {
    pub table: ParamId,
}

impl PositionalEmbedding {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, len: usize, dim: usize, rng: &mut R) -> Self {
        let table = store.add(format!("{name}.table"), Tensor::randn(&[len, dim], EMBEDDING_INIT_STD, rng));
        Self { table }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let t = tape.param(store, self.table);
        tape.add_broadcast(x, t)
    }
}

/// Multi-head self-attention with query, key, value and output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadSelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if heads == 0 || dim % heads != 0 {
            return Err(NnError::Invalid(format!("channels {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng),
            heads,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NnError> {
        let (o, _) = self.forward_with_attention(tape, store, x)?;
        Ok(o)
    }

    /// Also returns the attention node, whose weights are available through
    /// [`Tape::attention_probs`].
    pub fn forward_with_attention<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<(Var, Var), NnError> {
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let a = tape.attention(q, k, v, self.heads)?;
        Ok((self.out.forward(tape, store, a)?, a))
    }
}
