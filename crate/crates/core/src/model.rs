//! Event encoding, sentence encoding and fusion, the chain Transformer and
//! the full per-sample forward pass.

use std::io::BufRead;

use crate::config::{AttentionVariant, ModelConfig, ScoreVariant};
use crate::corpus::text::Encoded;
use crate::corpus::vocab::{Vocabulary, CLS_ID};
use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::layers::{encoder_layer, require, Affine, Dropout, EncoderLayerParams, Initializer};
use crate::nn::params::{ParamId, ParamStore};
use crate::prepare::{EventIds, PreparedSample};
use crate::scoring::{
    attention_graph, candidate_distribution, event_scores_graph, predict, ChainBreakdown, ScoreBreakdown, ScoringParams,
};

const WORD_EMB_BOUND: f64 = 0.05;
const POS_EMB_BOUND: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct EventEncoderParams {
    pub word_emb: ParamId,
    /// `W_v`, `W_a0`, `W_a1`, `W_a2`, each `d_w x d_e`.
    pub proj: [ParamId; 4],
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct TextEncoderParams {
    /// `d_w -> d_e` projection of the shared word table.
    pub input: Affine,
    pub pos_emb: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

#[derive(Debug, Clone)]
pub struct ChainModelParams {
    /// `n + 1` positions: the history slots and the candidate.
    pub pos_emb: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

/// Handles into a `ParamStore` laid out for one `ModelConfig`.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub event: EventEncoderParams,
    /// Absent when text is disabled.
    pub text: Option<TextEncoderParams>,
    pub chain: ChainModelParams,
    pub scoring: ScoringParams,
}

/// Chain Transformer outputs for one (chain, candidate) pair.
#[derive(Debug, Clone, Copy)]
pub struct HiddenChain {
    /// `n x d_e`.
    pub h: Var,
    /// `1 x d_e`.
    pub h_c: Var,
}

#[derive(Debug, Clone)]
pub struct ChainVars {
    pub slot: usize,
    pub s: Var,
    pub u: Option<Var>,
    pub alpha: Var,
    pub f: Var,
}

#[derive(Debug, Clone)]
pub struct CandidateVars {
    pub chains: Vec<ChainVars>,
    pub o: Var,
}

/// Tape handles for one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub candidates: Vec<CandidateVars>,
    /// `1 x m` candidate scores.
    pub logits: Var,
    /// Cross-entropy against the gold candidate.
    pub loss: Var,
}

impl SampleForward {
    pub fn scores(&self, g: &Graph) -> Vec<f64> {
        g.value(self.logits).to_vec()
    }

    pub fn breakdown(
        &self,
        g: &Graph,
        sample: &PreparedSample,
        verbs: &[Option<String>],
    ) -> Result<Vec<ScoreBreakdown>> {
        let o = self.scores(g);
        let pr = candidate_distribution(&o)?;
        let best = predict(&pr);
        Ok(self
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| ScoreBreakdown {
                sample: sample.id.clone(),
                candidate: i,
                verb: verbs.get(i).cloned().flatten(),
                chains: c
                    .chains
                    .iter()
                    .map(|ch| ChainBreakdown {
                        slot: ch.slot,
                        s: g.value(ch.s).to_vec(),
                        u: ch.u.map(|u| g.value(u).to_vec()),
                        alpha: g.value(ch.alpha).to_vec(),
                        f: g.scalar(ch.f),
                    })
                    .collect(),
                o: o[i],
                pr: pr.clone(),
                predicted: i == best,
                gold: i == sample.answer,
            })
            .collect())
    }
}

fn layer_prefix(stack: &str, i: usize) -> String {
    format!("{stack}.layer{i}")
}

impl Model {
    /// Fresh parameters. Every tensor draws from a stream named after it, so
    /// configurations that differ only in optional parts share the rest
    /// bit for bit.
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<(Model, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer { store: &mut store, seed };
        let (dw, de) = (config.d_w, config.d_e);

        init.uniform("event.word_emb", WORD_EMB_BOUND, &[vocab_size, dw])?;
        for name in ["event.w_v", "event.w_a0", "event.w_a1", "event.w_a2"] {
            init.xavier(name, dw, de, &[dw, de])?;
        }
        init.constant("event.b_e", 0.0, &[de])?;

        if config.use_text {
            init.affine("text.in", dw, de)?;
            init.uniform("text.pos_emb", POS_EMB_BOUND, &[config.max_text_len, de])?;
            for i in 0..config.text_layers {
                EncoderLayerParams::init(&mut init, &layer_prefix("text", i), de, config.text_ffn, config.text_heads)?;
            }
        }

        init.uniform("chain.pos_emb", POS_EMB_BOUND, &[config.n + 1, de])?;
        for i in 0..config.chain_layers {
            EncoderLayerParams::init(&mut init, &layer_prefix("chain", i), de, config.chain_ffn, config.chain_heads)?;
        }

        if config.score_variant == ScoreVariant::L {
            init.xavier("score.w_se", de, 1, &[de, 1])?;
            init.xavier("score.w_sc", de, 1, &[de, 1])?;
            init.constant("score.b_s", 0.0, &[1])?;
        }
        if config.attention_variant == AttentionVariant::Additive {
            init.xavier("attn.w_ae", de, 1, &[de, 1])?;
            init.xavier("attn.w_ac", de, 1, &[de, 1])?;
            init.constant("attn.b_a", 0.0, &[1])?;
        }

        let model = Model::from_store(config, &store)?;
        Ok((model, store))
    }

    /// Binds to existing parameters, checking every shape against `config`.
    pub fn from_store(config: &ModelConfig, store: &ParamStore) -> Result<Model> {
        config.validate()?;
        let (dw, de) = (config.d_w, config.d_e);
        let shaped = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = require(store, name)?;
            let actual = store.get(id).shape();
            if actual != shape {
                return Err(Error::Checkpoint(format!("{name}: shape {actual:?}, config expects {shape:?}")));
            }
            Ok(id)
        };

        let word_emb = require(store, "event.word_emb")?;
        if store.get(word_emb).dims2().1 != dw {
            return Err(Error::Checkpoint(format!("event.word_emb width differs from d_w = {dw}")));
        }
        let event = EventEncoderParams {
            word_emb,
            proj: [
                shaped("event.w_v", &[dw, de])?,
                shaped("event.w_a0", &[dw, de])?,
                shaped("event.w_a1", &[dw, de])?,
                shaped("event.w_a2", &[dw, de])?,
            ],
            bias: shaped("event.b_e", &[de])?,
        };

        let layers = |stack: &str, count: usize, ffn: usize, heads: usize| -> Result<Vec<EncoderLayerParams>> {
            (0..count)
                .map(|i| {
                    let prefix = layer_prefix(stack, i);
                    let p = EncoderLayerParams::lookup(store, &prefix, heads)?;
                    shaped(&format!("{prefix}.attn.q.w"), &[de, de])?;
                    shaped(&format!("{prefix}.ffn.in.w"), &[de, ffn])?;
                    Ok(p)
                })
                .collect()
        };

        let text = if config.use_text {
            shaped("text.in.w", &[dw, de])?;
            Some(TextEncoderParams {
                input: Affine::lookup(store, "text.in")?,
                pos_emb: shaped("text.pos_emb", &[config.max_text_len, de])?,
                layers: layers("text", config.text_layers, config.text_ffn, config.text_heads)?,
            })
        } else {
            None
        };

        let chain = ChainModelParams {
            pos_emb: shaped("chain.pos_emb", &[config.n + 1, de])?,
            layers: layers("chain", config.chain_layers, config.chain_ffn, config.chain_heads)?,
        };

        let pair = |a: &str, b: &str, c: &str| -> Result<[ParamId; 3]> {
            Ok([shaped(a, &[de, 1])?, shaped(b, &[de, 1])?, shaped(c, &[1])?])
        };
        let scoring = ScoringParams {
            linear: match config.score_variant {
                ScoreVariant::L => Some(pair("score.w_se", "score.w_sc", "score.b_s")?),
                _ => None,
            },
            additive: match config.attention_variant {
                AttentionVariant::Additive => Some(pair("attn.w_ae", "attn.w_ac", "attn.b_a")?),
                _ => None,
            },
        };

        Ok(Model { config: config.clone(), event, text, chain, scoring })
    }

    pub fn vocab_size(&self, store: &ParamStore) -> usize {
        store.get(self.event.word_emb).dims2().0
    }

    /// `tanh(v W_v + a0 W_a0 + a1 W_a1 + a2 W_a2 + b_e)` for each event, as
    /// rows of a `k x d_e` matrix.
    pub fn encode_events(&self, g: &mut Graph, events: &[EventIds]) -> Result<Var> {
        if events.is_empty() {
            return Err(Error::Empty("events to encode"));
        }
        let mut acc: Option<Var> = None;
        for (slot, &proj) in self.event.proj.iter().enumerate() {
            let ids: Vec<usize> = events.iter().map(|e| e[slot]).collect();
            let emb = g.gather(self.event.word_emb, &ids)?;
            let w = g.param(proj);
            let term = g.matmul(emb, w)?;
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(a, term)?,
            });
        }
        let b = g.param(self.event.bias);
        let pre = g.add_row(acc.expect("four projections"), b)?;
        Ok(g.tanh(pre))
    }

    /// `[CLS]` output of the sentence encoder, `1 x d_e`. Only the valid
    /// prefix is run: padding neither attends nor is attended to, so it
    /// cannot influence the `[CLS]` position.
    pub fn encode_text(&self, g: &mut Graph, text: &Encoded, mut dropout: Option<&mut Dropout>) -> Result<Var> {
        let params = self.text.as_ref().ok_or_else(|| Error::Config("model has no text encoder".into()))?;
        if text.ids.first() != Some(&CLS_ID) {
            return Err(Error::Invalid("sentence ids must start with [CLS]".into()));
        }
        if text.ids.len() != text.valid.len() || text.ids.len() > self.config.max_text_len {
            return Err(Error::Shape(format!(
                "{} ids, {} mask entries, max_text_len {}",
                text.ids.len(),
                text.valid.len(),
                self.config.max_text_len
            )));
        }
        let len = text.valid.iter().take_while(|&&v| v).count();
        if text.valid[len..].iter().any(|&v| v) {
            return Err(Error::Invalid("sentence mask must be a valid prefix".into()));
        }
        let emb = g.gather(self.event.word_emb, &text.ids[..len])?;
        let x = params.input.apply(g, emb)?;
        let pos = g.param(params.pos_emb);
        let pos = g.slice_rows(pos, 0, len)?;
        let mut x = g.add(x, pos)?;
        let valid = vec![true; len];
        for layer in &params.layers {
            x = encoder_layer(g, x, layer, &valid, dropout.as_deref_mut())?;
        }
        g.row(x, 0)
    }

    /// `e + t` with `t` absent meaning `e` itself.
    pub fn fuse_event_text(g: &mut Graph, e: Var, t: Option<Var>) -> Result<Var> {
        match t {
            Some(t) => g.add(e, t),
            None => Ok(e),
        }
    }

    /// Appends the candidate, adds positions `0..=n` and runs the chain
    /// Transformer. `valid` masks history positions when null masking is on.
    pub fn model_chain(
        &self,
        g: &mut Graph,
        chain: Var,
        candidate: Var,
        valid: Option<&[bool]>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<HiddenChain> {
        let n = self.config.n;
        let (rows, d) = g.shape(chain);
        if rows != n || g.shape(candidate) != (1, d) {
            return Err(Error::Shape(format!(
                "chain {rows}x{d} and candidate {:?}, expected {n} events",
                g.shape(candidate)
            )));
        }
        let seq = g.concat_rows(&[chain, candidate])?;
        let pos = g.param(self.chain.pos_emb);
        let mut x = g.add(seq, pos)?;
        let mask: Vec<bool> = match valid {
            Some(v) if v.len() != n => return Err(Error::Shape(format!("mask of {} for {n} events", v.len()))),
            Some(v) => v.iter().copied().chain([true]).collect(),
            None => vec![true; n + 1],
        };
        for layer in &self.chain.layers {
            x = encoder_layer(g, x, layer, &mask, dropout.as_deref_mut())?;
        }
        Ok(HiddenChain { h: g.slice_rows(x, 0, n)?, h_c: g.row(x, n)? })
    }

    /// Fused embeddings `e'` of a prepared chain, `n x d_e`.
    fn chain_embeddings(
        &self,
        g: &mut Graph,
        events: &[EventIds],
        texts: &[Option<Encoded>],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let e = self.encode_events(g, events)?;
        if !self.config.use_text || texts.iter().all(Option::is_none) {
            return Ok(e);
        }
        let mut rows = Vec::with_capacity(events.len());
        for (i, text) in texts.iter().enumerate() {
            let ei = g.row(e, i)?;
            let t = match text {
                Some(t) => Some(self.encode_text(g, t, dropout.as_deref_mut())?),
                None => None,
            };
            rows.push(Model::fuse_event_text(g, ei, t)?);
        }
        g.concat_rows(&rows)
    }

    /// Scores every candidate of `sample` and the cross-entropy of the gold one.
    pub fn forward(
        &self,
        g: &mut Graph,
        sample: &PreparedSample,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<SampleForward> {
        let cfg = &self.config;
        if sample.candidates.is_empty() {
            return Err(Error::Empty("candidates"));
        }
        let mut embs = Vec::with_capacity(sample.chains.len());
        for c in &sample.chains {
            embs.push(self.chain_embeddings(g, &c.events, &c.texts, dropout.as_deref_mut())?);
        }
        let cand_ids: Vec<EventIds> = sample.candidates.iter().map(|c| c.event).collect();
        let cand_embs = self.encode_events(g, &cand_ids)?;

        let mut candidates = Vec::with_capacity(sample.candidates.len());
        for (k, cand) in sample.candidates.iter().enumerate() {
            if cand.chains.is_empty() {
                return Err(Error::NoProtagonist(k));
            }
            let e_c = g.row(cand_embs, k)?;
            let mut chains = Vec::with_capacity(cand.chains.len());
            for &ci in &cand.chains {
                let pc = &sample.chains[ci];
                let real: Vec<bool> = pc.null.iter().map(|&z| !z).collect();
                let chain_mask = cfg.mask_null_events.then_some(real.as_slice());
                let hidden = self.model_chain(g, embs[ci], e_c, chain_mask, dropout.as_deref_mut())?;
                let s = event_scores_graph(g, hidden.h, hidden.h_c, cfg.score_variant, &self.scoring)?;
                let attn_mask = cfg.exclude_null_positions.then_some(real.as_slice());
                let (u, alpha) =
                    attention_graph(g, hidden.h, hidden.h_c, cfg.attention_variant, &self.scoring, attn_mask)?;
                let f = g.matmul(alpha, s)?;
                chains.push(ChainVars { slot: pc.slot, s, u, alpha, f });
            }
            let mut o = chains[0].f;
            for ch in &chains[1..] {
                o = g.add(o, ch.f)?;
            }
            candidates.push(CandidateVars { chains, o });
        }
        let os: Vec<Var> = candidates.iter().map(|c| c.o).collect();
        let logits = g.concat_cols(&os)?;
        let loss = g.cross_entropy(logits, sample.answer)?;
        Ok(SampleForward { candidates, logits, loss })
    }
}

/// Overwrites word-table rows from a `token v1 .. v_dw` text file. Returns
/// how many vocabulary tokens received a vector.
pub fn load_word_vectors<R: BufRead>(reader: R, vocab: &Vocabulary, store: &mut ParamStore) -> Result<usize> {
    let id = require(store, "event.word_emb")?;
    let (rows, dw) = store.get(id).dims2();
    let mut loaded = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Invalid(format!("word vectors line {}: {e}", n + 1)))?;
        if values.len() != dw {
            return Err(Error::Invalid(format!("word vectors line {}: {} values, d_w is {dw}", n + 1, values.len())));
        }
        if let Some(row) = vocab.lookup(token) {
            if row < rows {
                store.get_mut(id).row_mut(row).copy_from_slice(&values);
                loaded += 1;
            }
        }
    }
    Ok(loaded)
}
