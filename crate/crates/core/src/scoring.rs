//! Event-level scores, attention pooling into chain scores, multi-chain
//! aggregation and the candidate distribution.
//!
//! Each operation exists twice: as plain functions over `f64` slices and as
//! tape operations used for training. Both follow the same arithmetic order.

use serde::Serialize;

use crate::config::{AttentionVariant, ScoreVariant};
use crate::error::{Error, Result};
use crate::nn::graph::{softmax, Graph, Var};
use crate::nn::params::{ParamId, ParamStore};

/// `w_i · h_i + w_c · h_c + b`, shared by the linear score and additive
/// attention.
#[derive(Debug, Clone, Copy)]
pub struct PairLinear<'a> {
    pub w_i: &'a [f64],
    pub w_c: &'a [f64],
    pub b: f64,
}

impl PairLinear<'_> {
    fn eval(&self, h_i: &[f64], h_c: &[f64]) -> f64 {
        dot(h_i, self.w_i) + (dot(h_c, self.w_c) + self.b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn event_score(h_i: &[f64], h_c: &[f64], variant: ScoreVariant, linear: Option<PairLinear>) -> Result<f64> {
    check_dims(h_i, h_c)?;
    match variant {
        ScoreVariant::E => {
            let sq: f64 = h_i.iter().zip(h_c).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(-sq.sqrt())
        }
        ScoreVariant::M => {
            let l1: f64 = h_i.iter().zip(h_c).map(|(a, b)| (a - b).abs()).sum();
            Ok(-l1)
        }
        ScoreVariant::C => {
            let ni = dot(h_i, h_i).sqrt();
            let nc = dot(h_c, h_c).sqrt();
            if ni == 0.0 || nc == 0.0 {
                return Err(Error::UndefinedCosine);
            }
            Ok(dot(h_i, h_c) / (ni * nc))
        }
        ScoreVariant::L => {
            let p = linear.ok_or_else(|| Error::Config("L-Score needs its weights".into()))?;
            check_dims(h_i, p.w_i)?;
            Ok(p.eval(h_i, h_c))
        }
    }
}

/// Attention logits (absent for `avg`) and weights over the `n` events.
/// With `valid`, excluded positions get weight 0.
pub fn attention_weights(
    h: &[Vec<f64>],
    h_c: &[f64],
    variant: AttentionVariant,
    additive: Option<PairLinear>,
    valid: Option<&[bool]>,
) -> Result<(Option<Vec<f64>>, Vec<f64>)> {
    if h.is_empty() {
        return Err(Error::Empty("attention over zero events"));
    }
    let valid = effective_valid(h.len(), valid)?;
    let logits: Vec<f64> = match variant {
        AttentionVariant::Avg => {
            let count = valid.as_ref().map_or(h.len(), |v| v.iter().filter(|&&b| b).count());
            let w = 1.0 / count as f64;
            let alpha = (0..h.len()).map(|i| if valid.as_ref().is_none_or(|v| v[i]) { w } else { 0.0 }).collect();
            return Ok((None, alpha));
        }
        AttentionVariant::ScaledDot => {
            let k = 1.0 / (h_c.len() as f64).sqrt();
            h.iter().map(|hi| dot(hi, h_c) * k).collect()
        }
        AttentionVariant::Dot => h.iter().map(|hi| dot(hi, h_c)).collect(),
        AttentionVariant::Additive => {
            let p = additive.ok_or_else(|| Error::Config("additive attention needs its weights".into()))?;
            h.iter().map(|hi| p.eval(hi, h_c)).collect()
        }
    };
    let mut alpha = logits.clone();
    crate::nn::graph::softmax_rows_in_place(&mut alpha, h.len(), valid.as_deref());
    Ok((Some(logits), alpha))
}

// None when every position takes part; an all-excluded chain falls back to
// all positions.
fn effective_valid(n: usize, valid: Option<&[bool]>) -> Result<Option<Vec<bool>>> {
    match valid {
        None => Ok(None),
        Some(v) if v.len() != n => Err(Error::Shape(format!("mask of {} for {n} events", v.len()))),
        Some(v) if v.iter().all(|&b| b) || v.iter().all(|&b| !b) => Ok(None),
        Some(v) => Ok(Some(v.to_vec())),
    }
}

/// `f = Σ α_i s_i`.
pub fn chain_score(s: &[f64], alpha: &[f64]) -> Result<f64> {
    check_dims(s, alpha)?;
    Ok(alpha.iter().zip(s).fold(0.0, |acc, (a, s)| if *a == 0.0 { acc } else { acc + a * s }))
}

/// Sum of per-chain scores; one term is returned as is.
pub fn aggregate_multichain(f: &[f64]) -> Result<f64> {
    match f {
        [] => Err(Error::Empty("chain scores")),
        [only] => Ok(*only),
        [first, rest @ ..] => Ok(rest.iter().fold(*first, |acc, x| acc + x)),
    }
}

pub fn candidate_distribution(o: &[f64]) -> Result<Vec<f64>> {
    softmax(o)
}

/// Argmax with ties going to the lowest index.
pub fn predict(pr: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in pr.iter().enumerate() {
        if p > pr[best] {
            best = i;
        }
    }
    best
}

/// Trainable scoring parameters, present only for the variants using them.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoringParams {
    /// `w_se`, `w_sc`, `b_s`.
    pub linear: Option<[ParamId; 3]>,
    /// `w_ae`, `w_ac`, `b_a`.
    pub additive: Option<[ParamId; 3]>,
}

impl ScoringParams {
    pub fn linear_values<'a>(&self, store: &'a ParamStore) -> Option<PairLinear<'a>> {
        self.linear.map(|ids| pair_values(store, ids))
    }

    pub fn additive_values<'a>(&self, store: &'a ParamStore) -> Option<PairLinear<'a>> {
        self.additive.map(|ids| pair_values(store, ids))
    }
}

fn pair_values(store: &ParamStore, [wi, wc, b]: [ParamId; 3]) -> PairLinear<'_> {
    PairLinear { w_i: store.get(wi).data(), w_c: store.get(wc).data(), b: store.get(b).data()[0] }
}

// `h [n,d] · w_i + (h_c [1,d] · w_c + b)` as an `[n,1]` column.
fn pair_linear_graph(g: &mut Graph, h: Var, h_c: Var, [wi, wc, b]: [ParamId; 3]) -> Result<Var> {
    let n = g.shape(h).0;
    let (wi, wc, b) = (g.param(wi), g.param(wc), g.param(b));
    let a = g.matmul(h, wi)?;
    let c = g.matmul(h_c, wc)?;
    let c = g.add(c, b)?;
    let c = g.broadcast(c, n, 1)?;
    g.add(a, c)
}

/// Event scores of the rows of `h [n,d]` against `h_c [1,d]`, as `[n,1]`.
pub fn event_scores_graph(
    g: &mut Graph,
    h: Var,
    h_c: Var,
    variant: ScoreVariant,
    params: &ScoringParams,
) -> Result<Var> {
    let (n, d) = g.shape(h);
    if g.shape(h_c) != (1, d) {
        return Err(Error::Shape(format!("h is {n}x{d} but h_c is {:?}", g.shape(h_c))));
    }
    match variant {
        ScoreVariant::E => {
            let diff = g.sub_row(h, h_c)?;
            let sq = g.mul(diff, diff)?;
            let rs = g.row_sum(sq);
            let dist = g.sqrt(rs);
            Ok(g.scale(dist, -1.0))
        }
        ScoreVariant::M => {
            let diff = g.sub_row(h, h_c)?;
            let a = g.abs(diff);
            let rs = g.row_sum(a);
            Ok(g.scale(rs, -1.0))
        }
        ScoreVariant::C => {
            let ht = g.transpose(h_c);
            let dots = g.matmul(h, ht)?;
            let hh = g.mul(h, h)?;
            let hh = g.row_sum(hh);
            let ni = g.sqrt(hh);
            let cc = g.mul(h_c, h_c)?;
            let cc = g.row_sum(cc);
            let nc = g.sqrt(cc);
            if g.value(ni).contains(&0.0) || g.value(nc)[0] == 0.0 {
                return Err(Error::UndefinedCosine);
            }
            let nc = g.broadcast(nc, n, 1)?;
            let den = g.mul(ni, nc)?;
            g.div(dots, den)
        }
        ScoreVariant::L => {
            let ids = params.linear.ok_or_else(|| Error::Config("L-Score needs its weights".into()))?;
            pair_linear_graph(g, h, h_c, ids)
        }
    }
}

/// Attention logits `[n,1]` (absent for `avg`) and weights `[1,n]`.
pub fn attention_graph(
    g: &mut Graph,
    h: Var,
    h_c: Var,
    variant: AttentionVariant,
    params: &ScoringParams,
    valid: Option<&[bool]>,
) -> Result<(Option<Var>, Var)> {
    let (n, d) = g.shape(h);
    let valid = effective_valid(n, valid)?;
    let logits = match variant {
        AttentionVariant::Avg => {
            let count = valid.as_ref().map_or(n, |v| v.iter().filter(|&&b| b).count());
            let w = 1.0 / count as f64;
            let alpha = (0..n).map(|i| if valid.as_ref().is_none_or(|v| v[i]) { w } else { 0.0 }).collect();
            return Ok((None, g.input(1, n, alpha)?));
        }
        AttentionVariant::ScaledDot | AttentionVariant::Dot => {
            let ht = g.transpose(h_c);
            let u = g.matmul(h, ht)?;
            if variant == AttentionVariant::ScaledDot {
                g.scale(u, 1.0 / (d as f64).sqrt())
            } else {
                u
            }
        }
        AttentionVariant::Additive => {
            let ids = params.additive.ok_or_else(|| Error::Config("additive attention needs its weights".into()))?;
            pair_linear_graph(g, h, h_c, ids)?
        }
    };
    let row = g.transpose(logits);
    let alpha = match valid {
        None => g.softmax_rows(row),
        Some(v) => g.masked_softmax_rows(row, None, Some(&v))?,
    };
    Ok((Some(logits), alpha))
}

/// Per-chain quantities for one (chain, candidate) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainBreakdown {
    pub slot: usize,
    pub s: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub f: f64,
}

/// Everything that went into one candidate's probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub sample: String,
    pub candidate: usize,
    pub verb: Option<String>,
    pub chains: Vec<ChainBreakdown>,
    pub o: f64,
    /// Distribution over all candidates of the sample.
    pub pr: Vec<f64>,
    pub predicted: bool,
    pub gold: bool,
}
