//! Synthetic corpora with a known Bayes structure.
//!
//! Every sample hides a small key tuple in its chains. The gold candidate's
//! verb is a fixed function of the whole key; the four distractors complete
//! a 2x2 grid over the two key components a restricted model cannot see,
//! plus one candidate that matches nothing. A model that observes only part
//! of the key is therefore left with exactly two indistinguishable
//! candidates.
//!
//! * `multichain`: key `(x, y)`; `x` is the verb of the last event of the
//!   first participant's chain, `y` that of the second participant's chain.
//! * `text`: key `(x, z)`; `x` is the last event's verb, `z` an adjective
//!   that occurs only in that event's sentence.
//! * `combined`: key `(x, z, y)`; needs both the sentence and the second chain.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::schema;
use crate::error::{Error, Result};
use crate::types::{Candidate, Chain, Event, EventSpan, Pos, Role, Sample, SentenceText};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Multichain,
    Text,
    Combined,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Multichain => "multichain",
            Task::Text => "text",
            Task::Combined => "combined",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multichain" => Ok(Task::Multichain),
            "text" => Ok(Task::Text),
            "combined" => Ok(Task::Combined),
            other => Err(Error::Config(format!("unknown task {other:?} (expected multichain|text|combined)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub task: Task,
    pub n_samples: usize,
    /// Values per key component.
    pub keys: usize,
    pub filler_verbs: usize,
    pub nouns: usize,
    pub filler_adjectives: usize,
    pub adverbs: usize,
    /// Raw chain length range (inclusive).
    pub min_chain: usize,
    pub max_chain: usize,
    /// Probability that a sentence also mentions the previous event of the chain.
    pub clause_prob: f64,
}

impl SynthConfig {
    pub fn new(task: Task, n_samples: usize) -> Self {
        SynthConfig {
            task,
            n_samples,
            keys: 4,
            filler_verbs: 12,
            nouns: 16,
            filler_adjectives: 6,
            adverbs: 4,
            min_chain: 3,
            max_chain: 8,
            clause_prob: 0.3,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic config: {m}")));
        if self.keys < 3 {
            return bad("keys must be >= 3");
        }
        if self.nouns < 2 || self.filler_verbs == 0 || self.filler_adjectives == 0 || self.adverbs == 0 {
            return bad("word pools must be non-empty (nouns >= 2)");
        }
        if self.min_chain == 0 || self.min_chain > self.max_chain {
            return bad("need 1 <= min_chain <= max_chain");
        }
        if !(0.0..=1.0).contains(&self.clause_prob) {
            return bad("clause_prob outside [0, 1]");
        }
        Ok(())
    }

    fn key_arity(&self) -> usize {
        match self.task {
            Task::Multichain | Task::Text => 2,
            Task::Combined => 3,
        }
    }
}

/// Gold-verb table: key tuple → verb token.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    keys: usize,
    arity: usize,
}

impl TargetTable {
    pub fn verb(&self, key: &[usize]) -> String {
        debug_assert_eq!(key.len(), self.arity);
        let idx = key.iter().fold(0, |acc, &k| acc * self.keys + k);
        format!("t{idx}")
    }

    /// Inverse of [`TargetTable::verb`].
    pub fn key(&self, verb: &str) -> Option<Vec<usize>> {
        let mut idx: usize = verb.strip_prefix('t')?.parse().ok()?;
        let mut key = vec![0; self.arity];
        for slot in key.iter_mut().rev() {
            *slot = idx % self.keys;
            idx /= self.keys;
        }
        (idx == 0).then_some(key)
    }
}

pub fn first_key_verb(i: usize) -> String {
    format!("ka{i}")
}

pub fn second_key_verb(i: usize) -> String {
    format!("kb{i}")
}

pub fn key_adjective(i: usize) -> String {
    format!("kj{i}")
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub samples: Vec<Sample>,
    pub table: TargetTable,
}

impl SyntheticCorpus {
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        schema::write_corpus(w, &self.samples)
    }
}

/// One optional entry per argument slot.
type Slots = [Option<String>; 3];

struct Builder<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn noun(&mut self) -> String {
        format!("n{}", self.rng.gen_range(0..self.cfg.nouns))
    }

    fn filler_verb(&mut self) -> String {
        format!("f{}", self.rng.gen_range(0..self.cfg.filler_verbs))
    }

    fn filler_adjective(&mut self) -> String {
        format!("j{}", self.rng.gen_range(0..self.cfg.filler_adjectives))
    }

    fn adverb(&mut self) -> String {
        format!("r{}", self.rng.gen_range(0..self.cfg.adverbs))
    }

    /// `[the] subj [adv] verb the adj obj [and verb2 the noun]`
    fn sentence(
        &mut self,
        subj: &str,
        verb: &str,
        adj: &str,
        obj: &str,
        index: usize,
        prev: Option<&str>,
    ) -> SentenceText {
        let mut tokens: Vec<String> = Vec::new();
        let mut pos = Vec::new();
        let mut push = |t: &str, p: Pos, tokens: &mut Vec<String>| {
            tokens.push(t.to_string());
            pos.push(p);
        };
        if self.rng.gen_bool(0.5) {
            push("the", Pos::O, &mut tokens);
        }
        push(subj, Pos::N, &mut tokens);
        if self.rng.gen_bool(0.3) {
            let adv = self.adverb();
            push(&adv, Pos::R, &mut tokens);
        }
        let verb_index = tokens.len();
        push(verb, Pos::V, &mut tokens);
        push("the", Pos::O, &mut tokens);
        push(adj, Pos::J, &mut tokens);
        push(obj, Pos::N, &mut tokens);
        let mut spans = vec![EventSpan { event: index as i64, start: verb_index, end: tokens.len() }];
        if let Some(prev) = prev {
            if self.rng.gen_bool(self.cfg.clause_prob) {
                push("and", Pos::O, &mut tokens);
                let start = tokens.len();
                let noun = self.noun();
                push(prev, Pos::V, &mut tokens);
                push("the", Pos::O, &mut tokens);
                push(&noun, Pos::N, &mut tokens);
                spans.push(EventSpan { event: index as i64 - 1, start, end: tokens.len() });
            }
        }
        SentenceText { tokens, pos, verb_index, event_spans: spans, focus_event: index as i64 }
    }

    /// A chain for protagonist headword `head` whose last event has verb
    /// `key_verb` and (if given) adjective `key_adj` in its sentence.
    fn chain(&mut self, eid: &str, head: &str, key_verb: &str, key_adj: Option<&str>) -> Chain {
        let len = self.rng.gen_range(self.cfg.min_chain..=self.cfg.max_chain);
        let mut events: Vec<Event> = Vec::with_capacity(len);
        for i in 0..len {
            let last = i + 1 == len;
            let verb = if last { key_verb.to_string() } else { self.filler_verb() };
            let other = self.noun();
            let as_subj = last || self.rng.gen_bool(0.6);
            let (a0, a1, role) = if as_subj {
                (head.to_string(), other.clone(), Role::Subj)
            } else {
                (other.clone(), head.to_string(), Role::Obj)
            };
            let adj = match (last, key_adj) {
                (true, Some(a)) => a.to_string(),
                _ => self.filler_adjective(),
            };
            let prev = events.last().and_then(|e| e.verb.clone());
            let sentence = self.sentence(&a0, &verb, &adj, &a1, i, prev.as_deref());
            events.push(Event {
                verb: Some(verb),
                args: [Some(a0), Some(a1), None],
                role,
                sentence: Some(Arc::new(sentence)),
            });
        }
        Chain { protagonist: eid.to_string(), events }
    }

    fn other_than(&mut self, avoid: &[usize]) -> usize {
        loop {
            let v = self.rng.gen_range(0..self.cfg.keys);
            if !avoid.contains(&v) {
                return v;
            }
        }
    }

    fn sample(&mut self, index: usize, seed: u64, table: &TargetTable) -> Sample {
        let keys = self.cfg.keys;
        let x = self.rng.gen_range(0..keys);
        let z = self.rng.gen_range(0..keys);
        let y = self.rng.gen_range(0..keys);

        let head_a = self.noun();
        let head_b = loop {
            let h = self.noun();
            if h != head_a {
                break h;
            }
        };

        let (entities, grid, participants, args): (Vec<Chain>, Vec<Vec<usize>>, Slots, Slots) = match self.cfg.task {
            Task::Multichain => {
                let a = self.chain("A", &head_a, &first_key_verb(x), None);
                let b = self.chain("B", &head_b, &second_key_verb(y), None);
                let x2 = self.other_than(&[x]);
                let y2 = self.other_than(&[y]);
                let x3 = self.other_than(&[x, x2]);
                let y3 = self.other_than(&[y, y2]);
                let grid = vec![vec![x, y], vec![x, y2], vec![x2, y], vec![x2, y2], vec![x3, y3]];
                (
                    vec![a, b],
                    grid,
                    [Some("A".into()), Some("B".into()), None],
                    [Some(head_a.clone()), Some(head_b.clone()), None],
                )
            }
            Task::Text => {
                let a = self.chain("A", &head_a, &first_key_verb(x), Some(&key_adjective(z)));
                let x2 = self.other_than(&[x]);
                let z2 = self.other_than(&[z]);
                let x3 = self.other_than(&[x, x2]);
                let z3 = self.other_than(&[z, z2]);
                let grid = vec![vec![x, z], vec![x, z2], vec![x2, z], vec![x2, z2], vec![x3, z3]];
                (vec![a], grid, [Some("A".into()), None, None], [Some(head_a.clone()), None, None])
            }
            Task::Combined => {
                let a = self.chain("A", &head_a, &first_key_verb(x), Some(&key_adjective(z)));
                let b = self.chain("B", &head_b, &second_key_verb(y), None);
                let z2 = self.other_than(&[z]);
                let y2 = self.other_than(&[y]);
                let x3 = self.other_than(&[x]);
                let z3 = self.other_than(&[z, z2]);
                let y3 = self.other_than(&[y, y2]);
                let grid = vec![vec![x, z, y], vec![x, z2, y], vec![x, z, y2], vec![x, z2, y2], vec![x3, z3, y3]];
                (
                    vec![a, b],
                    grid,
                    [Some("A".into()), Some("B".into()), None],
                    [Some(head_a.clone()), Some(head_b.clone()), None],
                )
            }
        };

        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.shuffle(&mut self.rng);
        let answer = order.iter().position(|&g| g == 0).expect("gold is in the grid");
        let candidates = order
            .iter()
            .map(|&g| Candidate {
                event: Event { verb: Some(table.verb(&grid[g])), args: args.clone(), role: Role::None, sentence: None },
                participants: participants.clone(),
            })
            .collect();
        Sample { id: format!("{}-{seed}-{index}", self.cfg.task), entities, candidates, answer }
    }
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let table = TargetTable { keys: cfg.keys, arity: cfg.key_arity() };
    let mut b = Builder { cfg, rng: ChaCha8Rng::seed_from_u64(seed) };
    let samples = (0..cfg.n_samples).map(|i| b.sample(i, seed, &table)).collect();
    Ok(SyntheticCorpus { samples, table })
}
