//! Turns samples into vocabulary ids once, so training epochs never touch
//! strings again.

use crate::config::ModelConfig;
use crate::corpus::text::{convert_aligned, encode_tokens, mask_constituents, Encoded, MaskSet};
use crate::corpus::vocab::Vocabulary;
use crate::error::Result;
use crate::exec::Execution;
use crate::types::{derive_chains, Event, Sample};

/// Vocabulary ids of verb, a0, a1, a2 (`[NULL]` for absent slots).
pub type EventIds = [usize; 4];

pub fn event_ids(event: &Event, vocab: &Vocabulary) -> EventIds {
    [
        vocab.slot_id(event.verb.as_deref()),
        vocab.slot_id(event.args[0].as_deref()),
        vocab.slot_id(event.args[1].as_deref()),
        vocab.slot_id(event.args[2].as_deref()),
    ]
}

/// A padded chain as seen from one candidate participant slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedChain {
    pub slot: usize,
    pub events: Vec<EventIds>,
    pub null: Vec<bool>,
    /// Encoded converted sentence per event; empty when text is off.
    pub texts: Vec<Option<Encoded>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCandidate {
    pub event: EventIds,
    /// Indices into `PreparedSample::chains`, in slot order.
    pub chains: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub answer: usize,
    /// Distinct chains over all candidates.
    pub chains: Vec<PreparedChain>,
    pub candidates: Vec<PreparedCandidate>,
}

pub fn prepare_sample(
    sample: &Sample,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    mask: &MaskSet,
) -> Result<PreparedSample> {
    let opts = cfg.chain_options();
    let mut chains: Vec<PreparedChain> = Vec::new();
    let mut candidates = Vec::with_capacity(sample.candidates.len());
    for (c, cand) in sample.candidates.iter().enumerate() {
        let mut refs = Vec::new();
        for sc in derive_chains(sample, c, opts)? {
            let events: Vec<EventIds> = sc.chain.events.iter().map(|e| event_ids(e, vocab)).collect();
            let null = sc.chain.events.iter().map(Event::is_null).collect();
            let texts = if cfg.use_text {
                sc.chain
                    .events
                    .iter()
                    .map(|e| sentence_ids(e, vocab, cfg.max_text_len, mask))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let chain = PreparedChain { slot: sc.slot, events, null, texts };
            let idx = match chains.iter().position(|x| *x == chain) {
                Some(i) => i,
                None => {
                    chains.push(chain);
                    chains.len() - 1
                }
            };
            refs.push(idx);
        }
        candidates.push(PreparedCandidate { event: event_ids(&cand.event, vocab), chains: refs });
    }
    Ok(PreparedSample { id: sample.id.clone(), answer: sample.answer, chains, candidates })
}

fn sentence_ids(event: &Event, vocab: &Vocabulary, max_len: usize, mask: &MaskSet) -> Result<Option<Encoded>> {
    let Some(s) = event.sentence.as_deref() else {
        return Ok(None);
    };
    let conv = convert_aligned(s, s.focus_event, event.role)?;
    let tokens = mask_constituents(&conv.tokens, &conv.pos, conv.verb_index, mask);
    Ok(Some(encode_tokens(&tokens, vocab, max_len)))
}

pub fn prepare_corpus(
    samples: &[Sample],
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    mask: &MaskSet,
    exec: Execution,
) -> Result<Vec<PreparedSample>> {
    exec.try_map(samples, |_, s| prepare_sample(s, vocab, cfg, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_synthetic, SynthConfig, Task};
    use crate::corpus::vocab::{build_vocabulary, NULL_ID};

    #[test]
    fn multichain_samples_share_two_chains() {
        let corpus = generate_synthetic(&SynthConfig::new(Task::Multichain, 20), 1).unwrap();
        let vocab = build_vocabulary(&corpus.samples, 1).unwrap();
        let mut cfg = ModelConfig::small();
        cfg.use_text = false;
        for s in &corpus.samples {
            let p = prepare_sample(s, &vocab, &cfg, &MaskSet::none()).unwrap();
            assert_eq!(p.chains.len(), 2);
            assert!(p.candidates.iter().all(|c| c.chains == vec![0, 1]));
            assert!(p.chains.iter().all(|c| c.events.len() == cfg.n && c.texts.is_empty()));
            for c in &p.chains {
                for (ids, &null) in c.events.iter().zip(&c.null) {
                    assert_eq!(null, ids.iter().all(|&i| i == NULL_ID));
                }
            }
        }
    }

    #[test]
    fn single_chain_uses_one_chain_and_texts_follow_events() {
        let corpus = generate_synthetic(&SynthConfig::new(Task::Combined, 10), 2).unwrap();
        let vocab = build_vocabulary(&corpus.samples, 1).unwrap();
        let mut cfg = ModelConfig::small();
        cfg.multi_chain = false;
        for s in &corpus.samples {
            let p = prepare_sample(s, &vocab, &cfg, &MaskSet::none()).unwrap();
            assert_eq!(p.chains.len(), 1);
            let c = &p.chains[0];
            assert_eq!(c.texts.len(), cfg.n);
            for (t, &null) in c.texts.iter().zip(&c.null) {
                assert_eq!(t.is_none(), null);
            }
        }
    }
}
