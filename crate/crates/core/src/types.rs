//! Events, chains and multiple-choice samples, plus the chain construction
//! shared by ingestion, the model and evaluation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dependency relation between an event's verb and the chain protagonist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Subj,
    Obj,
    Iobj,
    None,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Subj => "subj",
            Role::Obj => "obj",
            Role::Iobj => "iobj",
            Role::None => "none",
        }
    }

    /// Tag token wrapped around the focus verb, if any.
    pub fn tag(self) -> Option<&'static str> {
        match self {
            Role::Subj => Some("[subj]"),
            Role::Obj => Some("[obj]"),
            Role::Iobj => Some("[iobj]"),
            Role::None => None,
        }
    }

    fn from_slot(slot: usize) -> Role {
        match slot {
            0 => Role::Subj,
            1 => Role::Obj,
            _ => Role::Iobj,
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subj" => Ok(Role::Subj),
            "obj" => Ok(Role::Obj),
            "iobj" => Ok(Role::Iobj),
            "none" => Ok(Role::None),
            other => Err(Error::Invalid(format!("unknown role {other:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse part-of-speech category supplied by the upstream tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pos {
    V,
    N,
    J,
    R,
    O,
}

impl Pos {
    pub fn as_str(self) -> &'static str {
        match self {
            Pos::V => "V",
            Pos::N => "N",
            Pos::J => "J",
            Pos::R => "R",
            Pos::O => "O",
        }
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "V" => Ok(Pos::V),
            "N" => Ok(Pos::N),
            "J" => Ok(Pos::J),
            "R" => Ok(Pos::R),
            "O" => Ok(Pos::O),
            other => Err(Error::Invalid(format!("unknown pos tag {other:?}"))),
        }
    }
}

/// One event mention inside a sentence: half-open token range `[start, end)`.
///
/// `event` is the index of the mentioned event within the chain that lists
/// the sentence; negative ids mark mentions that belong to other chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSpan {
    pub event: i64,
    pub start: usize,
    pub end: usize,
}

impl EventSpan {
    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn overlaps(&self, other: &EventSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceText {
    pub tokens: Vec<String>,
    pub pos: Vec<Pos>,
    pub verb_index: usize,
    pub event_spans: Vec<EventSpan>,
    pub focus_event: i64,
}

impl SentenceText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn focus_span(&self) -> Option<&EventSpan> {
        self.event_spans.iter().find(|s| s.event == self.focus_event)
    }

    /// Checks token/tag alignment, span bounds and that the focus span
    /// covers the verb. Returns the offending field path on failure.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.pos.len() != self.tokens.len() {
            return Err(("pos".into(), format!("{} tags for {} tokens", self.pos.len(), self.tokens.len())));
        }
        if self.verb_index >= self.tokens.len() {
            return Err((
                "verb_index".into(),
                format!("{} out of bounds for {} tokens", self.verb_index, self.tokens.len()),
            ));
        }
        for (k, span) in self.event_spans.iter().enumerate() {
            if span.start >= span.end {
                return Err((
                    format!("event_spans[{k}]"),
                    format!("empty or inverted span ({}, {})", span.start, span.end),
                ));
            }
            if span.end > self.tokens.len() {
                return Err((
                    format!("event_spans[{k}]"),
                    format!("span ({}, {}) out of bounds for {} tokens", span.start, span.end, self.tokens.len()),
                ));
            }
        }
        match self.focus_span() {
            None => Err(("focus_event".into(), format!("no span for focus event {}", self.focus_event))),
            Some(span) if !span.contains(self.verb_index) => {
                Err(("focus_event".into(), "focus span does not contain verb_index".into()))
            }
            Some(_) => Ok(()),
        }
    }
}

/// ⟨verb, a0, a1, a2⟩ plus protagonist role and the originating sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub verb: Option<String>,
    pub args: [Option<String>; 3],
    pub role: Role,
    pub sentence: Option<Arc<SentenceText>>,
}

impl Event {
    pub fn null() -> Self {
        Event { verb: None, args: [None, None, None], role: Role::None, sentence: None }
    }

    pub fn new(verb: &str, a0: Option<&str>, a1: Option<&str>, a2: Option<&str>) -> Self {
        Event {
            verb: Some(verb.to_string()),
            args: [a0.map(String::from), a1.map(String::from), a2.map(String::from)],
            role: Role::None,
            sentence: None,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn is_null(&self) -> bool {
        self.verb.is_none() && self.args.iter().all(Option::is_none)
    }
}

/// Role of `headword` in `event`: first matching slot in a0, a1, a2 order.
pub fn protagonist_role(event: &Event, headword: &str) -> Role {
    event.args.iter().position(|a| a.as_deref() == Some(headword)).map(Role::from_slot).unwrap_or(Role::None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub protagonist: String,
    pub events: Vec<Event>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Pads with null events up to `n`, or keeps the `n` most recent events.
pub fn pad_chain(chain: &Chain, n: usize) -> Chain {
    let skip = chain.events.len().saturating_sub(n);
    let mut events: Vec<Event> = chain.events[skip..].to_vec();
    events.resize_with(n, Event::null);
    Chain { protagonist: chain.protagonist.clone(), events }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub event: Event,
    pub participants: [Option<String>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Raw (unpadded) chains in file order.
    pub entities: Vec<Chain>,
    pub candidates: Vec<Candidate>,
    pub answer: usize,
}

impl Sample {
    pub fn chain(&self, entity: &str) -> Option<&Chain> {
        self.entities.iter().find(|c| c.protagonist == entity)
    }
}

/// A padded chain scored against one participant slot of a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotChain {
    pub slot: usize,
    pub chain: Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainOptions {
    pub n: usize,
    pub multi_chain: bool,
    /// Score null participant slots against an all-null chain instead of
    /// dropping them.
    pub include_null_slots: bool,
}

/// One padded chain per participant slot of candidate `candidate_index`.
///
/// Roles are recomputed against the candidate's headword in that slot; events
/// where the headword does not occur keep the role stored with the chain.
pub fn derive_chains(sample: &Sample, candidate_index: usize, opts: ChainOptions) -> Result<Vec<SlotChain>> {
    let candidate = sample.candidates.get(candidate_index).ok_or_else(|| {
        Error::Invalid(format!(
            "candidate index {candidate_index} out of range for {} candidates",
            sample.candidates.len()
        ))
    })?;
    if candidate.participants.iter().all(Option::is_none) {
        return Err(Error::NoProtagonist(candidate_index));
    }

    let mut out = Vec::with_capacity(3);
    for (slot, participant) in candidate.participants.iter().enumerate() {
        let Some(eid) = participant else {
            if opts.multi_chain && opts.include_null_slots {
                out.push(SlotChain {
                    slot,
                    chain: pad_chain(&Chain { protagonist: String::new(), events: Vec::new() }, opts.n),
                });
            }
            continue;
        };
        let raw =
            sample.chain(eid).ok_or_else(|| Error::Invalid(format!("sample {}: unknown entity {eid:?}", sample.id)))?;
        let mut chain = pad_chain(raw, opts.n);
        if let Some(head) = candidate.event.args[slot].as_deref() {
            for ev in chain.events.iter_mut().filter(|e| !e.is_null()) {
                let role = protagonist_role(ev, head);
                if role != Role::None {
                    ev.role = role;
                }
            }
        }
        out.push(SlotChain { slot, chain });
        if !opts.multi_chain {
            break;
        }
    }
    Ok(out)
}
