//! Transformer encoder layer, dropout and parameter initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tensor::Tensor;
use crate::rng;

/// Uniform(-bound, bound) initialization.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Glorot/Xavier uniform bound for an affine map.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Adds parameters to a store, each drawn from its own named sub-stream so
/// that adding or removing one parameter never shifts the others.
pub struct Initializer<'a> {
    pub store: &'a mut ParamStore,
    pub seed: u64,
}

impl Initializer<'_> {
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize, shape: &[usize]) -> Result<ParamId> {
        let mut r = rng::stream(self.seed, name);
        let t = uniform(shape, xavier_bound(fan_in, fan_out), &mut r);
        self.store.add(name, t)
    }

    pub fn uniform(&mut self, name: &str, bound: f64, shape: &[usize]) -> Result<ParamId> {
        let mut r = rng::stream(self.seed, name);
        let t = uniform(shape, bound, &mut r);
        self.store.add(name, t)
    }

    pub fn constant(&mut self, name: &str, value: f64, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::filled(shape, value))
    }

    pub fn affine(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Affine> {
        Ok(Affine {
            weight: self.xavier(&format!("{prefix}.w"), fan_in, fan_out, &[fan_in, fan_out])?,
            bias: self.constant(&format!("{prefix}.b"), 0.0, &[fan_out])?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Affine> {
        Ok(Affine { weight: require(store, &format!("{prefix}.w"))?, bias: require(store, &format!("{prefix}.b"))? })
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

pub fn require(store: &ParamStore, name: &str) -> Result<ParamId> {
    store.id(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
}

/// Inverted dropout with its own generator.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropout { rate, rng }
    }

    /// Zeroes each entry with probability `rate` and scales survivors by
    /// `1 / (1 - rate)`, so the expectation is unchanged.
    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = g.shape(x);
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..r * c).map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep }).collect();
        let m = g.input(r, c, mask)?;
        g.mul(x, m)
    }
}

pub fn maybe_dropout(g: &mut Graph, x: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// One post-norm Transformer encoder layer. The per-head projections are
/// column blocks of the full `d x d` query/key/value matrices. The key map
/// has no bias: it would shift every logit of a row equally, which softmax
/// ignores, so it could never receive a gradient.
#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub query: Affine,
    pub key: ParamId,
    pub value: Affine,
    pub output: Affine,
    pub ffn_in: Affine,
    pub ffn_out: Affine,
    pub norm1: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
    pub heads: usize,
    pub dim: usize,
}

impl EncoderLayerParams {
    pub fn init(init: &mut Initializer, prefix: &str, dim: usize, ffn: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{dim} not divisible into {heads} heads")));
        }
        Ok(EncoderLayerParams {
            query: init.affine(&format!("{prefix}.attn.q"), dim, dim)?,
            key: init.xavier(&format!("{prefix}.attn.k.w"), dim, dim, &[dim, dim])?,
            value: init.affine(&format!("{prefix}.attn.v"), dim, dim)?,
            output: init.affine(&format!("{prefix}.attn.o"), dim, dim)?,
            ffn_in: init.affine(&format!("{prefix}.ffn.in"), dim, ffn)?,
            ffn_out: init.affine(&format!("{prefix}.ffn.out"), ffn, dim)?,
            norm1: (
                init.constant(&format!("{prefix}.norm1.gain"), 1.0, &[dim])?,
                init.constant(&format!("{prefix}.norm1.bias"), 0.0, &[dim])?,
            ),
            norm2: (
                init.constant(&format!("{prefix}.norm2.gain"), 1.0, &[dim])?,
                init.constant(&format!("{prefix}.norm2.bias"), 0.0, &[dim])?,
            ),
            heads,
            dim,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        let query = Affine::lookup(store, &format!("{prefix}.attn.q"))?;
        let dim = store.get(query.weight).dims2().0;
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{dim} not divisible into {heads} heads")));
        }
        Ok(EncoderLayerParams {
            query,
            key: require(store, &format!("{prefix}.attn.k.w"))?,
            value: Affine::lookup(store, &format!("{prefix}.attn.v"))?,
            output: Affine::lookup(store, &format!("{prefix}.attn.o"))?,
            ffn_in: Affine::lookup(store, &format!("{prefix}.ffn.in"))?,
            ffn_out: Affine::lookup(store, &format!("{prefix}.ffn.out"))?,
            norm1: (require(store, &format!("{prefix}.norm1.gain"))?, require(store, &format!("{prefix}.norm1.bias"))?),
            norm2: (require(store, &format!("{prefix}.norm2.gain"))?, require(store, &format!("{prefix}.norm2.bias"))?),
            heads,
            dim,
        })
    }
}

/// Output of the attention mixing step, before the output projection.
pub struct AttentionMix {
    /// Concatenated per-head outputs, `len x dim`.
    pub mixed: Var,
    /// Value projection `x W_v + b_v`.
    pub values: Var,
    /// Per-head attention matrices, `len x len`.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product self-attention over valid positions.
/// Invalid positions neither attend nor are attended to.
pub fn attention_mix(g: &mut Graph, x: Var, p: &EncoderLayerParams, valid: &[bool]) -> Result<AttentionMix> {
    let (len, dim) = g.shape(x);
    if dim != p.dim || valid.len() != len {
        return Err(Error::Shape(format!(
            "encoder layer: input {len}x{dim}, layer dim {}, mask {}",
            p.dim,
            valid.len()
        )));
    }
    let q = p.query.apply(g, x)?;
    let wk = g.param(p.key);
    let k = g.matmul(x, wk)?;
    let v = p.value.apply(g, x)?;
    let dh = dim / p.heads;
    let all_valid = valid.iter().all(|&b| b);
    let mut outs = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let logits = g.matmul_bt(qh, kh)?;
        let logits = g.scale(logits, 1.0 / (dh as f64).sqrt());
        let a =
            if all_valid { g.softmax_rows(logits) } else { g.masked_softmax_rows(logits, Some(valid), Some(valid))? };
        outs.push(g.matmul(a, vh)?);
        weights.push(a);
    }
    let mixed = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok(AttentionMix { mixed, values: v, weights })
}

/// Self-attention, residual, layer norm, ReLU feed-forward, residual,
/// layer norm. Output shape equals input shape.
pub fn encoder_layer(
    g: &mut Graph,
    x: Var,
    p: &EncoderLayerParams,
    valid: &[bool],
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let mix = attention_mix(g, x, p, valid)?;
    let attn = p.output.apply(g, mix.mixed)?;
    let attn = maybe_dropout(g, attn, dropout.as_deref_mut())?;
    let res = g.add(x, attn)?;
    let (g1, b1) = (g.param(p.norm1.0), g.param(p.norm1.1));
    let h = g.layer_norm(res, g1, b1)?;

    let f = p.ffn_in.apply(g, h)?;
    let f = g.relu(f);
    let f = p.ffn_out.apply(g, f)?;
    let f = maybe_dropout(g, f, dropout)?;
    let res = g.add(h, f)?;
    let (g2, b2) = (g.param(p.norm2.0), g.param(p.norm2.1));
    g.layer_norm(res, g2, b2)
}
