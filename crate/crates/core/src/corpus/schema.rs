//! JSON Lines corpus reader and writer.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Candidate, Chain, Event, EventSpan, Pos, Role, Sample, SentenceText};

/// Candidates per sample in the corpus format.
pub const CANDIDATES: usize = 5;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    id: String,
    entities: Vec<RawEntity>,
    candidates: Vec<RawCandidate>,
    answer: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntity {
    eid: String,
    chain: Vec<RawEvent>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    verb: Option<String>,
    a0: Option<String>,
    a1: Option<String>,
    a2: Option<String>,
    role: Role,
    sentence: Option<RawSentence>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSentence {
    tokens: Vec<String>,
    pos: Vec<Pos>,
    verb_index: i64,
    event_spans: Vec<RawSpan>,
    focus_event: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    event: i64,
    start: i64,
    end: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    verb: String,
    a0: Option<String>,
    a1: Option<String>,
    a2: Option<String>,
    participants: [Option<String>; 3],
}

/// Parses one corpus line. `line` is 1-based and only used for messages.
pub fn parse_line(text: &str, line: usize) -> Result<Sample> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RawSample = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            Error::Json { line, message: inner.to_string() }
        } else {
            Error::schema(line, path, inner.to_string())
        }
    })?;
    de.end().map_err(|e| Error::Json { line, message: e.to_string() })?;
    validate(raw, line)
}

fn nonneg(v: i64, line: usize, path: impl Fn() -> String) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::schema(line, path(), format!("negative value {v}")))
}

fn validate(raw: RawSample, line: usize) -> Result<Sample> {
    if raw.candidates.len() != CANDIDATES {
        return Err(Error::schema(
            line,
            "candidates",
            format!("candidate count != {CANDIDATES} (got {})", raw.candidates.len()),
        ));
    }
    let answer = nonneg(raw.answer, line, || "answer".into())?;
    if answer >= raw.candidates.len() {
        return Err(Error::schema(
            line,
            "answer",
            format!("answer {answer} out of range [0, {})", raw.candidates.len()),
        ));
    }

    let mut seen = HashSet::new();
    let mut entities = Vec::with_capacity(raw.entities.len());
    for (ei, ent) in raw.entities.into_iter().enumerate() {
        if !seen.insert(ent.eid.clone()) {
            return Err(Error::schema(line, format!("entities[{ei}].eid"), format!("duplicate entity {:?}", ent.eid)));
        }
        let chain_len = ent.chain.len();
        let mut events = Vec::with_capacity(chain_len);
        for (ci, ev) in ent.chain.into_iter().enumerate() {
            let base = format!("entities[{ei}].chain[{ci}]");
            let sentence = match ev.sentence {
                None => None,
                Some(s) => Some(Arc::new(convert_sentence(s, chain_len, line, &base)?)),
            };
            events.push(Event { verb: ev.verb, args: [ev.a0, ev.a1, ev.a2], role: ev.role, sentence });
        }
        entities.push(Chain { protagonist: ent.eid, events });
    }

    let mut candidates = Vec::with_capacity(CANDIDATES);
    for (k, c) in raw.candidates.into_iter().enumerate() {
        if c.participants.iter().all(Option::is_none) {
            return Err(Error::schema(line, format!("candidates[{k}].participants"), "no protagonist"));
        }
        for (j, p) in c.participants.iter().enumerate() {
            if let Some(eid) = p {
                if !seen.contains(eid) {
                    return Err(Error::schema(
                        line,
                        format!("candidates[{k}].participants[{j}]"),
                        format!("unknown entity {eid:?}"),
                    ));
                }
            }
        }
        candidates.push(Candidate {
            event: Event { verb: Some(c.verb), args: [c.a0, c.a1, c.a2], role: Role::None, sentence: None },
            participants: c.participants,
        });
    }

    Ok(Sample { id: raw.id, entities, candidates, answer })
}

fn convert_sentence(s: RawSentence, chain_len: usize, line: usize, base: &str) -> Result<SentenceText> {
    let path = |f: &str| format!("{base}.sentence.{f}");
    let verb_index = nonneg(s.verb_index, line, || path("verb_index"))?;
    let mut spans = Vec::with_capacity(s.event_spans.len());
    for (k, sp) in s.event_spans.iter().enumerate() {
        let p = || path(&format!("event_spans[{k}]"));
        let start = nonneg(sp.start, line, p)?;
        let end = nonneg(sp.end, line, p)?;
        if sp.event >= chain_len as i64 {
            return Err(Error::schema(line, p(), format!("event {} beyond chain length {chain_len}", sp.event)));
        }
        spans.push(EventSpan { event: sp.event, start, end });
    }
    let sentence =
        SentenceText { tokens: s.tokens, pos: s.pos, verb_index, event_spans: spans, focus_event: s.focus_event };
    sentence.validate().map_err(|(field, msg)| Error::schema(line, path(&field), msg))?;
    Ok(sentence)
}

/// Reads every sample; blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(line.trim(), i + 1)?);
    }
    Ok(out)
}

pub fn read_corpus(path: &std::path::Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_corpus(std::io::BufReader::new(file))
}

fn to_raw(sample: &Sample) -> RawSample {
    RawSample {
        id: sample.id.clone(),
        entities: sample
            .entities
            .iter()
            .map(|c| RawEntity { eid: c.protagonist.clone(), chain: c.events.iter().map(raw_event).collect() })
            .collect(),
        candidates: sample
            .candidates
            .iter()
            .map(|c| RawCandidate {
                verb: c.event.verb.clone().unwrap_or_default(),
                a0: c.event.args[0].clone(),
                a1: c.event.args[1].clone(),
                a2: c.event.args[2].clone(),
                participants: c.participants.clone(),
            })
            .collect(),
        answer: sample.answer as i64,
    }
}

fn raw_event(e: &Event) -> RawEvent {
    RawEvent {
        verb: e.verb.clone(),
        a0: e.args[0].clone(),
        a1: e.args[1].clone(),
        a2: e.args[2].clone(),
        role: e.role,
        sentence: e.sentence.as_deref().map(|s| RawSentence {
            tokens: s.tokens.clone(),
            pos: s.pos.clone(),
            verb_index: s.verb_index as i64,
            event_spans: s
                .event_spans
                .iter()
                .map(|sp| RawSpan { event: sp.event, start: sp.start as i64, end: sp.end as i64 })
                .collect(),
            focus_event: s.focus_event,
        }),
    }
}

pub fn sample_to_line(sample: &Sample) -> String {
    serde_json::to_string(&to_raw(sample)).expect("corpus records always serialize")
}

pub fn write_corpus<W: Write>(mut writer: W, samples: &[Sample]) -> Result<()> {
    for s in samples {
        writer.write_all(sample_to_line(s).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
