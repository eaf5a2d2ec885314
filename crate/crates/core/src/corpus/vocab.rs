use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::{Event, Sample};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const UNK: &str = "[UNK]";
pub const SUBJ: &str = "[subj]";
pub const OBJ: &str = "[obj]";
pub const IOBJ: &str = "[iobj]";
pub const NULL: &str = "[NULL]";
pub const OOV: &str = "[OOV]";

/// Reserved tokens in id order 0..8.
pub const RESERVED: [&str; 8] = [PAD, CLS, UNK, SUBJ, OBJ, IOBJ, NULL, OOV];

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const NULL_ID: usize = 6;
pub const OOV_ID: usize = 7;

pub fn is_reserved(token: &str) -> bool {
    RESERVED.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), ids: HashMap::new() };
        for t in RESERVED {
            v.push(t.to_string());
        }
        v
    }

    fn push(&mut self, token: String) {
        self.ids.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token) || self.ids.contains_key(&token.to_lowercase())
    }

    /// Reserved tokens match exactly; everything else is lowercased.
    /// Unseen tokens map to `[OOV]`.
    pub fn id(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(OOV_ID)
    }

    /// Like `id` but `None` for unseen tokens.
    pub fn lookup(&self, token: &str) -> Option<usize> {
        if let Some(id) = RESERVED.iter().position(|r| *r == token) {
            return Some(id);
        }
        match self.ids.get(token) {
            Some(&id) => Some(id),
            None => self.ids.get(&token.to_lowercase()).copied(),
        }
    }

    /// Id for an event slot; null slots map to `[NULL]`.
    pub fn slot_id(&self, token: Option<&str>) -> usize {
        token.map_or(NULL_ID, |t| self.id(t))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (id, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{id}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut v = Vocabulary { tokens: Vec::new(), ids: HashMap::new() };
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Invalid(format!("vocabulary line {}: {m}", i + 1));
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| bad("expected token<TAB>id"))?;
            let id: usize = id.parse().map_err(|_| bad("bad id"))?;
            if id != v.tokens.len() {
                return Err(bad("ids must be contiguous from 0"));
            }
            if v.ids.contains_key(tok) {
                return Err(bad("duplicate token"));
            }
            v.push(tok.to_string());
        }
        for (id, t) in RESERVED.iter().enumerate() {
            if v.tokens.get(id).map(String::as_str) != Some(*t) {
                return Err(Error::Invalid(format!("vocabulary: reserved token {t} must have id {id}")));
            }
        }
        Ok(v)
    }
}

fn event_tokens(e: &Event) -> impl Iterator<Item = &str> {
    e.verb.as_deref().into_iter().chain(e.args.iter().filter_map(|a| a.as_deref()))
}

/// Event verbs and headwords are always kept; sentence tokens need at least
/// `min_count` occurrences. Order: reserved, then frequency descending, ties
/// lexicographic. Tokens are lowercased.
pub fn build_vocabulary(samples: &[Sample], min_count: usize) -> Result<Vocabulary> {
    if samples.is_empty() {
        return Err(Error::Empty("corpus has no samples"));
    }
    if min_count == 0 {
        return Err(Error::Config("min_count must be >= 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut forced: HashSet<String> = HashSet::new();
    let mut count = |t: &str, force: bool| {
        if is_reserved(t) {
            return;
        }
        let t = t.to_lowercase();
        if force {
            forced.insert(t.clone());
        }
        *counts.entry(t).or_default() += 1;
    };
    for s in samples {
        for chain in &s.entities {
            for ev in &chain.events {
                for t in event_tokens(ev) {
                    count(t, true);
                }
                if let Some(sent) = &ev.sentence {
                    for t in &sent.tokens {
                        count(t, false);
                    }
                }
            }
        }
        for c in &s.candidates {
            for t in event_tokens(&c.event) {
                count(t, true);
            }
        }
    }
    let mut entries: Vec<(String, usize)> =
        counts.into_iter().filter(|(t, c)| *c >= min_count || forced.contains(t)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut v = Vocabulary::with_reserved();
    for (t, _) in entries {
        v.push(t);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::types::{Candidate, Chain, EventSpan, Pos, SentenceText};

    fn sentence(words: &[&str]) -> Arc<SentenceText> {
        Arc::new(SentenceText {
            tokens: words.iter().map(|w| w.to_string()).collect(),
            pos: vec![Pos::O; words.len()],
            verb_index: 0,
            event_spans: vec![EventSpan { event: 0, start: 0, end: 1 }],
            focus_event: 0,
        })
    }

    fn corpus() -> Vec<Sample> {
        let mut ev = Event::new("walk", Some("man"), None, None);
        ev.sentence = Some(sentence(&["Eat", "eat", "eat", "pay"]));
        let cand = Candidate {
            event: Event::new("leave", Some("man"), None, None),
            participants: [Some("A".into()), None, None],
        };
        vec![Sample {
            id: "x".into(),
            entities: vec![Chain { protagonist: "A".into(), events: vec![ev] }],
            candidates: vec![cand; 5],
            answer: 0,
        }]
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = build_vocabulary(&corpus(), 1).unwrap();
        for (i, t) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(t), i);
            assert_eq!(v.token(i), Some(*t));
        }
    }

    #[test]
    fn min_count_filters_sentence_tokens_only() {
        let v = build_vocabulary(&corpus(), 2).unwrap();
        assert!(v.contains("eat"));
        assert!(!v.contains("pay"));
        assert_eq!(v.id("pay"), OOV_ID);
        // event tokens kept although seen fewer than min_count times in sentences
        assert!(v.contains("walk") && v.contains("leave") && v.contains("man"));
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = build_vocabulary(&corpus(), 1).unwrap();
        // leave x5, man x6, eat x3, walk x1, pay x1
        let order: Vec<&str> = (8..v.len()).map(|i| v.token(i).unwrap()).collect();
        assert_eq!(order, ["man", "leave", "eat", "pay", "walk"]);
    }

    #[test]
    fn lookup_lowercases() {
        let v = build_vocabulary(&corpus(), 1).unwrap();
        assert_eq!(v.id("EAT"), v.id("eat"));
        assert_eq!(v.slot_id(None), NULL_ID);
    }

    #[test]
    fn deterministic_and_file_round_trip() {
        let a = build_vocabulary(&corpus(), 1).unwrap();
        let b = build_vocabulary(&corpus(), 1).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("[PAD]\t0\n[CLS]\t1\n"));
        assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(build_vocabulary(&[], 1).is_err());
    }
}
