//! Reverse-mode differentiation over a linear tape of fused tensor ops.
//!
//! A [`Tape`] records one forward pass. Leaves are either constant inputs or
//! copies of parameters from a [`ParamStore`]; [`Tape::backward`] walks the
//! tape in reverse and [`Tape::accumulate`] adds the parameter gradients
//! into the store (`+=`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tensor::{gemm, Mat, ParamId, ParamStore, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGrad(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Swish(Var),
    Glu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    DepthwiseConv { x: Var, w: Var, b: Var, dilation: usize },
    Conv { x: Var, w: Var, b: Var, dilation: usize },
    Dropout { x: Var, mask: Vec<T> },
    Transpose(Var),
    Reshape(Var),
    Lsd { pred: Var, truth: Vec<T>, row_lsd: Vec<f64> },
    Sgl { pred: Var, truth: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Swish(_) => "swish",
            Op::Glu(_) => "glu",
            Op::Attention { .. } => "attention",
            Op::DepthwiseConv { .. } => "depthwise_conv1d",
            Op::Conv { .. } => "conv1d",
            Op::Dropout { .. } => "dropout",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Lsd { .. } => "lsd_loss",
            Op::Sgl { .. } => "sgl_loss",
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every tape value that needs one.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    rng: ChaCha8Rng,
    non_finite: Option<&'static str>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().unwrap_or(&1);
    let total: usize = shape.iter().product();
    (if last == 0 { 0 } else { total / last }, last)
}

/// `(batch, length, channels)` view of a 2-D or 3-D sequence shape.
fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize), NnError> {
    match shape {
        [f, c] => Ok((1, *f, *c)),
        [b, f, c] => Ok((*b, *f, *c)),
        _ => Err(shape_err(op, format!("expected [F, C] or [B, F, C], got {shape:?}"))),
    }
}

impl<T: Real> Tape<T> {
    /// `training` enables dropout; `seed` drives the dropout masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            non_finite: None,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.non_finite.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.non_finite = Some(op.name());
        }
        let needs_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// First op that produced a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<(), NnError> {
        match self.non_finite {
            Some(op) => Err(NnError::NonFinite(op)),
            None => Ok(()),
        }
    }

    pub fn input(&mut self, shape: &[usize], data: Vec<T>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "input shape/data length");
        self.push(shape.to_vec(), data, Op::Input, &[])
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let op = if t.requires_grad { Op::Param(id) } else { Op::Input };
        self.push(t.shape.clone(), t.data.clone(), op, &[])
    }

    /// `x·Wᵀ + b` over the last axis; `w` is `[O, I]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (n, i) = rows_of(&xs);
        if ws.len() != 2 || ws[1] != i {
            return Err(shape_err("linear", format!("x {xs:?} vs W {ws:?}")));
        }
        let o = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(shape_err("linear", format!("bias {:?} vs {o} outputs", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n * o];
        gemm(
            n,
            i,
            o,
            T::one(),
            Mat::rows(self.value(x), 0, i),
            Mat::cols(self.value(w), 0, i),
            T::zero(),
            &mut out,
            0,
            o,
        );
        if let Some(b) = b {
            let bias = self.value(b);
            for row in out.chunks_exact_mut(o) {
                for (y, bb) in row.iter_mut().zip(bias) {
                    *y += *bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = o;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(shape, out, Op::Linear { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add_broadcast", format!("{sa:?} vs {sb:?}")));
        }
        let bv = self.value(b);
        let out = self
            .value(a)
            .chunks_exact(bv.len())
            .flat_map(|chunk| chunk.iter().zip(bv).map(|(x, y)| *x + *y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddBroadcast(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|x| *x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a), &[a])
    }

    /// Normalizes over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let (n, c) = rows_of(&xs);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("layer_norm", format!("x {xs:?} vs gamma {:?}", self.shape(gamma))));
        }
        let eps = T::of(eps);
        let cn = T::of(c as f64);
        let mut xhat = vec![T::zero(); n * c];
        let mut inv_std = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * c];
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        for r in 0..n {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / cn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(xs, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]))
    }

    /// `x·σ(x)`.
    pub fn swish(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| *v * sigmoid(*v)).collect();
        self.push(self.shape(x).to_vec(), out, Op::Swish(x), &[x])
    }

    /// Splits the last axis into halves `a‖b` and returns `a·σ(b)`.
    pub fn glu(&mut self, x: Var) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let (n, c2) = rows_of(&xs);
        if c2 % 2 != 0 {
            return Err(shape_err("glu", format!("odd last dimension in {xs:?}")));
        }
        let c = c2 / 2;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            let row = &xv[r * c2..(r + 1) * c2];
            out.extend((0..c).map(|j| row[j] * sigmoid(row[c + j])));
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = c;
        Ok(self.push(shape, out, Op::Glu(x), &[x]))
    }

    /// Multi-head scaled dot-product attention on `[F, C]` or `[B, F, C]`
    /// projections, with scale `1/√(C/heads)` and no masking.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, NnError> {
        let qs = self.shape(q).to_vec();
        if self.shape(k) != qs.as_slice() || self.shape(v) != qs.as_slice() {
            return Err(shape_err("attention", format!("q {qs:?}, k {:?}, v {:?}", self.shape(k), self.shape(v))));
        }
        let (b, f, c) = seq_dims("attention", &qs)?;
        if heads == 0 || c % heads != 0 {
            return Err(NnError::Invalid(format!("channels {c} not divisible by {heads} heads")));
        }
        let dh = c / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); b * heads * f * f];
        let mut out = vec![T::zero(); b * f * c];
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        for bi in 0..b {
            for h in 0..heads {
                let off = bi * f * c + h * dh;
                let pbase = (bi * heads + h) * f * f;
                gemm(f, dh, f, scale, Mat::rows(qv, off, c), Mat::cols(kv, off, c), T::zero(), &mut probs, pbase, f);
                for row in probs[pbase..pbase + f * f].chunks_exact_mut(f) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for p in row.iter_mut() {
                        *p = (*p - max).exp();
                        total += *p;
                    }
                    for p in row.iter_mut() {
                        *p /= total;
                    }
                }
                gemm(f, f, dh, T::one(), Mat::rows(&probs, pbase, f), Mat::rows(vv, off, c), T::zero(), &mut out, off, c);
            }
        }
        Ok(self.push(qs, out, Op::Attention { q, k, v, heads, probs }, &[q, k, v]))
    }

    /// Attention weights of an attention node, `[B, heads, F, F]` flattened.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Per-channel convolution along the sequence axis with `w: [C, k]`,
    /// odd `k`, dilation `r` and zero padding `(k−1)·r/2` per side.
    /// Convolution, not correlation: an impulse at `f` yields the kernel
    /// laid out in order, centred at `f`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, bias: Var, dilation: usize) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let (b, f, c) = seq_dims("depthwise_conv1d", &xs)?;
        let ws = self.shape(w);
        if ws.len() != 2 || ws[0] != c || self.shape(bias) != [c] {
            return Err(shape_err("depthwise_conv1d", format!("x {xs:?}, w {ws:?}")));
        }
        let k = ws[1];
        check_kernel(k, dilation)?;
        let half = (k / 2) as isize;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        let mut out = vec![T::zero(); b * f * c];
        for bi in 0..b {
            for t in 0..f {
                let o = &mut out[(bi * f + t) * c..(bi * f + t + 1) * c];
                o.copy_from_slice(bv);
                for j in 0..k {
                    let src = t as isize - (j as isize - half) * dilation as isize;
                    if src < 0 || src >= f as isize {
                        continue;
                    }
                    let xrow = &xv[(bi * f + src as usize) * c..(bi * f + src as usize + 1) * c];
                    for ch in 0..c {
                        o[ch] += wv[ch * k + j] * xrow[ch];
                    }
                }
            }
        }
        Ok(self.push(xs, out, Op::DepthwiseConv { x, w, b: bias, dilation }, &[x, w, bias]))
    }

    /// Dense convolution along the sequence axis with `w: [C_out, C_in, k]`;
    /// same padding and orientation as [`Tape::depthwise_conv1d`].
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, dilation: usize) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let (b, f, ci) = seq_dims("conv1d", &xs)?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != ci || self.shape(bias) != [ws[0]] {
            return Err(shape_err("conv1d", format!("x {xs:?}, w {ws:?}")));
        }
        let (co, k) = (ws[0], ws[2]);
        check_kernel(k, dilation)?;
        let mut out = vec![T::zero(); b * f * co];
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        for row in out.chunks_exact_mut(co) {
            row.copy_from_slice(bv);
        }
        for bi in 0..b {
            for j in 0..k {
                let Some((dst, src, len)) = tap_range(f, j, k, dilation) else { continue };
                // out[dst..dst+len] += x[src..src+len] · W_jᵀ, W_j[o, i] = w[o, i, j].
                let wj = Mat { data: wv, offset: j, rs: k, cs: ci * k };
                gemm(len, ci, co, T::one(), Mat::rows(xv, (bi * f + src) * ci, ci), wj, T::one(), &mut out, (bi * f + dst) * co, co);
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = co;
        Ok(self.push(shape, out, Op::Conv { x, w, b: bias, dilation }, &[x, w, bias]))
    }

    /// Inverted dropout: kept values are scaled by `1/(1−p)`. Identity when
    /// the tape is not in training mode or `p = 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }, &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(shape_err("transpose", format!("needs rank >= 2, got {xs:?}")));
        }
        let (r, c) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.len()];
        for (bi, block) in xv.chunks_exact((r * c).max(1)).enumerate() {
            let base = bi * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[base + j * r + i] = block[i * c + j];
                }
            }
        }
        let mut shape = xs;
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        Ok(self.push(shape, out, Op::Transpose(x), &[x]))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", format!("{:?} into {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), &[x]))
    }

    /// Mean over rows (all axes but the last) of the RMS difference along the
    /// last axis. The row RMS has zero subgradient where it vanishes.
    pub fn lsd_loss(&mut self, pred: Var, truth: &[T]) -> Result<Var, NnError> {
        let ps = self.shape(pred).to_vec();
        if truth.len() != self.value(pred).len() {
            return Err(shape_err("lsd_loss", format!("pred {ps:?} vs {} targets", truth.len())));
        }
        let (rows, f) = rows_of(&ps);
        if rows == 0 || f == 0 {
            return Err(shape_err("lsd_loss", format!("empty prediction {ps:?}")));
        }
        let pv = self.value(pred);
        let mut row_lsd = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = 0.0;
            for j in r * f..(r + 1) * f {
                let d = (pv[j] - truth[j]).f64();
                acc += d * d;
            }
            row_lsd.push((acc / f as f64).sqrt());
        }
        let loss = row_lsd.iter().sum::<f64>() / rows as f64;
        Ok(self.push(vec![1], vec![T::of(loss)], Op::Lsd { pred, truth: truth.to_vec(), row_lsd }, &[pred]))
    }

    /// Mean absolute mismatch of adjacent-bin differences along the last axis.
    /// Ties have zero subgradient.
    pub fn sgl_loss(&mut self, pred: Var, truth: &[T]) -> Result<Var, NnError> {
        let ps = self.shape(pred).to_vec();
        if truth.len() != self.value(pred).len() {
            return Err(shape_err("sgl_loss", format!("pred {ps:?} vs {} targets", truth.len())));
        }
        let (rows, f) = rows_of(&ps);
        if f < 2 {
            return Err(NnError::Invalid(format!("spectral gradient loss needs F >= 2, got {f}")));
        }
        let pv = self.value(pred);
        let mut acc = 0.0;
        for r in 0..rows {
            let base = r * f;
            for j in base..base + f - 1 {
                let dp = (pv[j + 1] - pv[j]).f64();
                let dt = (truth[j + 1] - truth[j]).f64();
                acc += (dp - dt).abs();
            }
        }
        let loss = acc / (rows * (f - 1)) as f64;
        Ok(self.push(vec![1], vec![T::of(loss)], Op::Sgl { pred, truth: truth.to_vec() }, &[pred]))
    }

    /// Gradients of the scalar `loss` with respect to all upstream values.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>, NnError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::NotScalar(self.nodes[loss.0].shape.clone()));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.backward_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Adds parameter gradients into `store` (`+=`).
    pub fn accumulate(&self, grads: &Grads<T>, store: &mut ParamStore<T>) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                for (acc, v) in store.get_mut(*id).grad.iter_mut().zip(g) {
                    *acc += *v;
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, local: &[T]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(local) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(local.to_vec()),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (n, i) = rows_of(self.shape(*x));
                let o = self.shape(*w)[0];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * i];
                    gemm(n, o, i, T::one(), Mat::rows(g, 0, o), Mat::rows(self.value(*w), 0, i), T::zero(), &mut dx, 0, i);
                    self.acc(grads, *x, &dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); o * i];
                    gemm(o, n, i, T::one(), Mat::cols(g, 0, o), Mat::rows(self.value(*x), 0, i), T::zero(), &mut dw, 0, i);
                    self.acc(grads, *w, &dw);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); o];
                    for row in g.chunks_exact(o) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    self.acc(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g);
                self.acc(grads, *b, g);
            }
            Op::AddBroadcast(a, b) => {
                self.acc(grads, *a, g);
                let n = self.value(*b).len();
                let mut db = vec![T::zero(); n];
                for chunk in g.chunks_exact(n) {
                    for (d, v) in db.iter_mut().zip(chunk) {
                        *d += *v;
                    }
                }
                self.acc(grads, *b, &db);
            }
            Op::Mul(a, b) => {
                let da: Vec<T> = g.iter().zip(self.value(*b)).map(|(x, y)| *x * *y).collect();
                let db: Vec<T> = g.iter().zip(self.value(*a)).map(|(x, y)| *x * *y).collect();
                self.acc(grads, *a, &da);
                self.acc(grads, *b, &db);
            }
            Op::Scale(a, s) => {
                let da: Vec<T> = g.iter().map(|v| *v * *s).collect();
                self.acc(grads, *a, &da);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).len()];
                self.acc(grads, *a, &da);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, c) = rows_of(self.shape(*x));
                let gm = self.value(*gamma);
                let cn = T::of(c as f64);
                let mut dx = vec![T::zero(); n * c];
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for r in 0..n {
                    let gr = &g[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut mean_d = T::zero();
                    let mut mean_dh = T::zero();
                    for j in 0..c {
                        let d = gr[j] * gm[j];
                        mean_d += d;
                        mean_dh += d * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                    mean_d /= cn;
                    mean_dh /= cn;
                    for j in 0..c {
                        dx[r * c + j] = inv_std[r] * (gr[j] * gm[j] - mean_d - hr[j] * mean_dh);
                    }
                }
                self.acc(grads, *x, &dx);
                self.acc(grads, *gamma, &dg);
                self.acc(grads, *beta, &db);
            }
            Op::Swish(x) => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(d, v)| {
                        let s = sigmoid(*v);
                        *d * (s + *v * s * (T::one() - s))
                    })
                    .collect();
                self.acc(grads, *x, &dx);
            }
            Op::Glu(x) => {
                let xv = self.value(*x);
                let (n, c2) = rows_of(self.shape(*x));
                let c = c2 / 2;
                let mut dx = vec![T::zero(); n * c2];
                for r in 0..n {
                    for j in 0..c {
                        let a = xv[r * c2 + j];
                        let s = sigmoid(xv[r * c2 + c + j]);
                        let d = g[r * c + j];
                        dx[r * c2 + j] = d * s;
                        dx[r * c2 + c + j] = d * a * s * (T::one() - s);
                    }
                }
                self.acc(grads, *x, &dx);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (b, f, c) = seq_dims("attention", self.shape(*q)).expect("checked in forward");
                let dh = c / heads;
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = vec![T::zero(); b * f * c];
                let mut dk = vec![T::zero(); b * f * c];
                let mut dv = vec![T::zero(); b * f * c];
                let mut dp = vec![T::zero(); f * f];
                for bi in 0..b {
                    for h in 0..*heads {
                        let off = bi * f * c + h * dh;
                        let pbase = (bi * heads + h) * f * f;
                        let p = &probs[pbase..pbase + f * f];
                        gemm(f, dh, f, T::one(), Mat::rows(g, off, c), Mat::cols(vv, off, c), T::zero(), &mut dp, 0, f);
                        gemm(f, f, dh, T::one(), Mat::cols(probs, pbase, f), Mat::rows(g, off, c), T::one(), &mut dv, off, c);
                        for r in 0..f {
                            let pr = &p[r * f..(r + 1) * f];
                            let dr = &mut dp[r * f..(r + 1) * f];
                            let dot: T = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
                            for (d, pp) in dr.iter_mut().zip(pr) {
                                *d = *pp * (*d - dot);
                            }
                        }
                        gemm(f, f, dh, scale, Mat::rows(&dp, 0, f), Mat::rows(kv, off, c), T::one(), &mut dq, off, c);
                        gemm(f, f, dh, scale, Mat::cols(&dp, 0, f), Mat::rows(qv, off, c), T::one(), &mut dk, off, c);
                    }
                }
                self.acc(grads, *q, &dq);
                self.acc(grads, *k, &dk);
                self.acc(grads, *v, &dv);
            }
            Op::DepthwiseConv { x, w, b, dilation } => {
                let (bn, f, c) = seq_dims("depthwise_conv1d", self.shape(*x)).expect("checked in forward");
                let k = self.shape(*w)[1];
                let half = (k / 2) as isize;
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut dx = vec![T::zero(); bn * f * c];
                let mut dw = vec![T::zero(); c * k];
                let mut db = vec![T::zero(); c];
                for bi in 0..bn {
                    for t in 0..f {
                        let gr = &g[(bi * f + t) * c..(bi * f + t + 1) * c];
                        for ch in 0..c {
                            db[ch] += gr[ch];
                        }
                        for j in 0..k {
                            let src = t as isize - (j as isize - half) * *dilation as isize;
                            if src < 0 || src >= f as isize {
                                continue;
                            }
                            let base = (bi * f + src as usize) * c;
                            for ch in 0..c {
                                dx[base + ch] += wv[ch * k + j] * gr[ch];
                                dw[ch * k + j] += xv[base + ch] * gr[ch];
                            }
                        }
                    }
                }
                self.acc(grads, *x, &dx);
                self.acc(grads, *w, &dw);
                self.acc(grads, *b, &db);
            }
            Op::Conv { x, w, b, dilation } => {
                let (bn, f, ci) = seq_dims("conv1d", self.shape(*x)).expect("checked in forward");
                let ws = self.shape(*w);
                let (co, k) = (ws[0], ws[2]);
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut dx = vec![T::zero(); bn * f * ci];
                let mut dw = vec![T::zero(); co * ci * k];
                let mut db = vec![T::zero(); co];
                for row in g.chunks_exact(co) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += *v;
                    }
                }
                let mut dwj = vec![T::zero(); co * ci];
                for j in 0..k {
                    dwj.fill(T::zero());
                    for bi in 0..bn {
                        let Some((dst, src, len)) = tap_range(f, j, k, *dilation) else { continue };
                        // dx[src..] += g[dst..] · W_j with W_j[o, i] = w[o, i, j].
                        let wj = Mat { data: wv, offset: j, rs: ci * k, cs: k };
                        gemm(len, co, ci, T::one(), Mat::rows(g, (bi * f + dst) * co, co), wj, T::one(), &mut dx, (bi * f + src) * ci, ci);
                        gemm(co, len, ci, T::one(), Mat::cols(g, (bi * f + dst) * co, co), Mat::rows(xv, (bi * f + src) * ci, ci), T::one(), &mut dwj, 0, ci);
                    }
                    for o in 0..co {
                        for i in 0..ci {
                            dw[(o * ci + i) * k + j] += dwj[o * ci + i];
                        }
                    }
                }
                self.acc(grads, *x, &dx);
                self.acc(grads, *w, &dw);
                self.acc(grads, *b, &db);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<T> = g.iter().zip(mask).map(|(d, m)| *d * *m).collect();
                self.acc(grads, *x, &dx);
            }
            Op::Transpose(x) => {
                let ys = &node.shape;
                let (r, c) = (ys[ys.len() - 2], ys[ys.len() - 1]);
                let mut dx = vec![T::zero(); g.len()];
                for (bi, block) in g.chunks_exact((r * c).max(1)).enumerate() {
                    let base = bi * r * c;
                    for i in 0..r {
                        for j in 0..c {
                            dx[base + j * r + i] = block[i * c + j];
                        }
                    }
                }
                self.acc(grads, *x, &dx);
            }
            Op::Reshape(x) => self.acc(grads, *x, g),
            Op::Lsd { pred, truth, row_lsd } => {
                let (rows, f) = rows_of(self.shape(*pred));
                let pv = self.value(*pred);
                let outer = g[0].f64() / rows as f64;
                let mut dp = vec![T::zero(); pv.len()];
                for (r, lsd) in row_lsd.iter().enumerate() {
                    if *lsd == 0.0 {
                        continue;
                    }
                    let s = outer / (f as f64 * lsd);
                    for j in r * f..(r + 1) * f {
                        dp[j] = T::of(s * (pv[j] - truth[j]).f64());
                    }
                }
                self.acc(grads, *pred, &dp);
            }
            Op::Sgl { pred, truth } => {
                let (rows, f) = rows_of(self.shape(*pred));
                let pv = self.value(*pred);
                let s = g[0] / T::of((rows * (f - 1)) as f64);
                let mut dp = vec![T::zero(); pv.len()];
                for r in 0..rows {
                    let base = r * f;
                    for j in base..base + f - 1 {
                        let diff = (pv[j + 1] - pv[j]) - (truth[j + 1] - truth[j]);
                        let sign = if diff > T::zero() {
                            T::one()
                        } else if diff < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        dp[j + 1] += sign * s;
                        dp[j] -= sign * s;
                    }
                }
                self.acc(grads, *pred, &dp);
            }
        }
    }
}

fn check_kernel(k: usize, dilation: usize) -> Result<(), NnError> {
    if k % 2 == 0 {
        return Err(NnError::Invalid(format!("kernel size {k} must be odd")));
    }
    if dilation == 0 {
        return Err(NnError::Invalid("dilation must be >= 1".into()));
    }
    Ok(())
}

/// Output rows `dst..dst+len` read input rows `src..src+len` for tap `j`.
fn tap_range(f: usize, j: usize, k: usize, dilation: usize) -> Option<(usize, usize, usize)> {
    let shift = (j as isize - (k / 2) as isize) * dilation as isize;
    let (dst, src) = if shift >= 0 { (shift as usize, 0) } else { (0, (-shift) as usize) };
    let len = f.checked_sub(dst.max(src))?;
    (len > 0).then_some((dst, src, len))
}
