//! Sentence preparation for the text encoder: leakage-free conversion,
//! constituent masking and id encoding.

use std::fmt;
use std::str::FromStr;

use crate::corpus::vocab::{self, Vocabulary, CLS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::types::{Pos, Role, SentenceText};

/// A converted sentence with tags kept aligned to tokens. Inserted tokens
/// are tagged `O`.
#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    pub tokens: Vec<String>,
    pub pos: Vec<Pos>,
    pub verb_index: usize,
}

/// Replaces every other event of the same chain with one `[UNK]` and wraps
/// the focus verb in role tags.
pub fn convert_sentence(sentence: &SentenceText, focus: i64, role: Role) -> Result<Vec<String>> {
    convert_aligned(sentence, focus, role).map(|c| c.tokens)
}

pub fn convert_aligned(sentence: &SentenceText, focus: i64, role: Role) -> Result<Converted> {
    let spans = &sentence.event_spans;
    let Some(focus_span) = spans.iter().find(|s| s.event == focus) else {
        return Err(Error::Invalid(format!("focus event {focus} has no span")));
    };
    // Spans begin at their verb; the stored verb index names the sentence's own focus.
    let focus_verb = if focus == sentence.focus_event { sentence.verb_index } else { focus_span.start };
    for (i, a) in spans.iter().enumerate() {
        if spans[i + 1..].iter().any(|b| a.overlaps(b)) {
            return Err(Error::OverlappingSpans);
        }
    }

    let mut tokens = sentence.tokens.clone();
    let mut pos = sentence.pos.clone();
    let mut verb_index = focus_verb;

    // Edits applied right to left so earlier indices stay valid.
    enum Edit {
        Replace(usize, usize),
        Tag(usize),
    }
    let mut edits: Vec<(usize, Edit)> = spans
        .iter()
        .filter(|s| s.event >= 0 && s.event != focus)
        .map(|s| (s.start, Edit::Replace(s.start, s.end)))
        .collect();
    if role.tag().is_some() {
        edits.push((focus_verb, Edit::Tag(focus_verb)));
    }
    edits.sort_by_key(|e| std::cmp::Reverse(e.0));

    for (_, edit) in edits {
        match edit {
            Edit::Replace(start, end) => {
                tokens.splice(start..end, [vocab::UNK.to_string()]);
                pos.splice(start..end, [Pos::O]);
                if start < verb_index {
                    verb_index -= end - start - 1;
                }
            }
            Edit::Tag(at) => {
                let tag = role.tag().unwrap_or_default().to_string();
                tokens.insert(at + 1, tag.clone());
                pos.insert(at + 1, Pos::O);
                tokens.insert(at, tag);
                pos.insert(at, Pos::O);
                verb_index = at + 1;
            }
        }
    }
    Ok(Converted { tokens, pos, verb_index })
}

/// POS categories hidden from the text encoder, with the two verb
/// refinements (focus verb only, all verbs but the focus).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MaskSet {
    /// In the order given, so labels read like `-R&J`.
    categories: Vec<Pos>,
    v_self: bool,
    v_others: bool,
}

impl MaskSet {
    pub fn none() -> Self {
        MaskSet::default()
    }

    pub fn new(categories: &[Pos], v_self: bool, v_others: bool) -> Result<Self> {
        let mut cats: Vec<Pos> = Vec::new();
        for &c in categories {
            if !cats.contains(&c) {
                cats.push(c);
            }
        }
        let categories = cats;
        if categories.contains(&Pos::O) {
            return Err(Error::Config("mask categories are V, N, J, R".into()));
        }
        if (v_self || v_others) && categories.contains(&Pos::V) {
            return Err(Error::Config("V_self/V_others refine V and cannot be combined with it".into()));
        }
        Ok(MaskSet { categories, v_self, v_others })
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty() && !self.v_self && !self.v_others
    }

    fn masks(&self, pos: Pos, is_focus: bool) -> bool {
        self.categories.contains(&pos) || (pos == Pos::V && ((self.v_self && is_focus) || (self.v_others && !is_focus)))
    }

    /// Row label in the constituent table style: `All`, `-V`, `-V(self)`, `-N&J`.
    pub fn label(&self) -> String {
        if self.is_empty() {
            return "All".into();
        }
        let mut parts: Vec<String> = self.categories.iter().map(|p| p.as_str().to_string()).collect();
        if self.v_self {
            parts.insert(0, "V(self)".into());
        }
        if self.v_others {
            parts.insert(0, "V(others)".into());
        }
        format!("-{}", parts.join("&"))
    }

    /// The constituent-ablation rows: single categories, the verb
    /// refinements and the four modifier pairs.
    pub fn table_rows() -> Vec<MaskSet> {
        use Pos::*;
        let m = |c: &[Pos], s, o| MaskSet::new(c, s, o).expect("static mask rows are valid");
        vec![
            m(&[V], false, false),
            m(&[N], false, false),
            m(&[J], false, false),
            m(&[R], false, false),
            m(&[], true, false),
            m(&[], false, true),
            m(&[V, N], false, false),
            m(&[V, R], false, false),
            m(&[N, J], false, false),
            m(&[R, J], false, false),
        ]
    }
}

impl FromStr for MaskSet {
    type Err = Error;

    /// Comma separated subset of `V,N,J,R,V_self,V_others`; empty means none.
    fn from_str(s: &str) -> Result<Self> {
        let mut cats = Vec::new();
        let (mut v_self, mut v_others) = (false, false);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "V_self" => v_self = true,
                "V_others" => v_others = true,
                "V" | "N" | "J" | "R" => cats.push(part.parse::<Pos>()?),
                other => return Err(Error::Config(format!("unknown mask entry {other:?}"))),
            }
        }
        MaskSet::new(&cats, v_self, v_others)
    }
}

impl fmt::Display for MaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = self.categories.iter().map(|p| p.as_str()).collect();
        if self.v_self {
            parts.push("V_self");
        }
        if self.v_others {
            parts.push("V_others");
        }
        f.write_str(&parts.join(","))
    }
}

/// Replaces tokens whose category is masked with `[UNK]`. Reserved tokens
/// (role tags, `[UNK]`, `[CLS]`) are never touched.
pub fn mask_constituents(tokens: &[String], pos: &[Pos], focus_verb_index: usize, mask: &MaskSet) -> Vec<String> {
    tokens
        .iter()
        .zip(pos)
        .enumerate()
        .map(|(i, (tok, &p))| {
            if !vocab::is_reserved(tok) && mask.masks(p, i == focus_verb_index) {
                vocab::UNK.to_string()
            } else {
                tok.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub valid: Vec<bool>,
}

/// `[CLS]` + token ids, truncated and padded to exactly `max_len`.
pub fn encode_tokens(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Encoded {
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(tokens.iter().take(max_len.saturating_sub(1)).map(|t| vocab.id(t)));
    let used = ids.len();
    ids.resize(max_len, PAD_ID);
    let valid = (0..max_len).map(|i| i < used).collect();
    Encoded { ids, valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EventSpan;

    fn restaurant() -> SentenceText {
        let words = "He entered the restaurant and asked the waiter for the menu";
        use Pos::*;
        SentenceText {
            tokens: words.split(' ').map(String::from).collect(),
            pos: vec![N, V, O, N, O, V, O, N, O, O, N],
            verb_index: 1,
            event_spans: vec![EventSpan { event: 0, start: 1, end: 4 }, EventSpan { event: 1, start: 5, end: 11 }],
            focus_event: 0,
        }
    }

    fn join(t: &[String]) -> String {
        t.join(" ")
    }

    #[test]
    fn restaurant_example() {
        let out = convert_sentence(&restaurant(), 0, Role::Subj).unwrap();
        assert_eq!(join(&out), "He [subj] entered [subj] the restaurant and [UNK]");
    }

    #[test]
    fn no_other_events_role_none_is_identity() {
        let mut s = restaurant();
        s.event_spans.truncate(1);
        assert_eq!(convert_sentence(&s, 0, Role::None).unwrap(), s.tokens);
    }

    #[test]
    fn other_chain_mentions_are_kept() {
        let mut s = restaurant();
        s.event_spans[1].event = -1;
        let out = convert_sentence(&s, 0, Role::Obj).unwrap();
        assert_eq!(join(&out), "He [obj] entered [obj] the restaurant and asked the waiter for the menu");
    }

    #[test]
    fn focus_after_replaced_span_tracks_verb() {
        let s = restaurant();
        let c = convert_aligned(&s, 1, Role::Iobj).unwrap();
        assert_eq!(join(&c.tokens), "He [UNK] and [iobj] asked [iobj] the waiter for the menu");
        assert_eq!(c.tokens[c.verb_index], "asked");
        assert_eq!(c.pos.len(), c.tokens.len());
    }

    #[test]
    fn two_spans_rebuilt_from_segments() {
        let tokens: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let s = SentenceText {
            pos: vec![Pos::O; 10],
            tokens: tokens.clone(),
            verb_index: 4,
            event_spans: vec![
                EventSpan { event: 2, start: 1, end: 3 },
                EventSpan { event: 0, start: 4, end: 5 },
                EventSpan { event: 1, start: 6, end: 9 },
            ],
            focus_event: 0,
        };
        let out = convert_sentence(&s, 0, Role::None).unwrap();
        // naive rebuild from segments
        let mut expected: Vec<String> = tokens[..1].to_vec();
        expected.push("[UNK]".into());
        expected.extend_from_slice(&tokens[3..6]);
        expected.push("[UNK]".into());
        expected.extend_from_slice(&tokens[9..]);
        assert_eq!(out, expected);
        assert_eq!(out.iter().filter(|t| *t == "[UNK]").count(), 2);
    }

    #[test]
    fn overlapping_spans_rejected() {
        let mut s = restaurant();
        s.event_spans[1].start = 3;
        assert!(matches!(convert_sentence(&s, 0, Role::Subj), Err(Error::OverlappingSpans)));
    }

    #[test]
    fn mask_v_hides_all_verbs() {
        let s = restaurant();
        let m: MaskSet = "V".parse().unwrap();
        let out = mask_constituents(&s.tokens, &s.pos, s.verb_index, &m);
        assert_eq!(join(&out), "He [UNK] the restaurant and [UNK] the waiter for the menu");
    }

    #[test]
    fn mask_v_others_keeps_focus() {
        let mut s = restaurant();
        s.event_spans[1].event = -1;
        let c = convert_aligned(&s, 0, Role::Subj).unwrap();
        let m: MaskSet = "V_others".parse().unwrap();
        let out = mask_constituents(&c.tokens, &c.pos, c.verb_index, &m);
        assert_eq!(join(&out), "He [subj] entered [subj] the restaurant and [UNK] the waiter for the menu");
        let m: MaskSet = "V_self".parse().unwrap();
        let out = mask_constituents(&c.tokens, &c.pos, c.verb_index, &m);
        assert_eq!(out[2], "[UNK]");
        assert_eq!(out[1], "[subj]");
    }

    #[test]
    fn empty_mask_is_identity() {
        let s = restaurant();
        assert_eq!(mask_constituents(&s.tokens, &s.pos, 1, &MaskSet::none()), s.tokens);
    }

    #[test]
    fn refinements_conflict_with_v() {
        assert!("V,V_self".parse::<MaskSet>().is_err());
        assert!("X".parse::<MaskSet>().is_err());
    }

    #[test]
    fn table_labels() {
        let labels: Vec<String> = MaskSet::table_rows().iter().map(MaskSet::label).collect();
        assert_eq!(labels, ["-V", "-N", "-J", "-R", "-V(self)", "-V(others)", "-V&N", "-V&R", "-N&J", "-R&J"]);
        assert_eq!(MaskSet::none().label(), "All");
    }

    #[test]
    fn encode_pads_and_truncates() {
        let v = Vocabulary::read(
            "[PAD]\t0\n[CLS]\t1\n[UNK]\t2\n[subj]\t3\n[obj]\t4\n[iobj]\t5\n[NULL]\t6\n[OOV]\t7\na\t8\nb\t9\n"
                .as_bytes(),
        )
        .unwrap();
        let toks: Vec<String> = ["a", "b", "zzz"].iter().map(|s| s.to_string()).collect();
        let e = encode_tokens(&toks, &v, 8);
        assert_eq!(e.ids, [1, 8, 9, 7, 0, 0, 0, 0]);
        assert_eq!(e.valid, [true, true, true, true, false, false, false, false]);
        let long: Vec<String> = (0..20).map(|_| "a".to_string()).collect();
        let e = encode_tokens(&long, &v, 8);
        assert_eq!(e.ids, [1, 8, 8, 8, 8, 8, 8, 8]);
        assert!(e.valid.iter().all(|&b| b));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pos_strategy() -> impl Strategy<Value = Pos> {
            prop_oneof![Just(Pos::V), Just(Pos::N), Just(Pos::J), Just(Pos::R), Just(Pos::O)]
        }

        fn mask_strategy() -> impl Strategy<Value = MaskSet> {
            (0usize..11).prop_map(|i| if i == 10 { MaskSet::none() } else { MaskSet::table_rows()[i].clone() })
        }

        proptest! {
            #[test]
            fn masking_is_idempotent(pos in prop::collection::vec(pos_strategy(), 1..12), mask in mask_strategy(), focus in 0usize..12) {
                let tokens: Vec<String> = (0..pos.len()).map(|i| format!("t{i}")).collect();
                let once = mask_constituents(&tokens, &pos, focus, &mask);
                let twice = mask_constituents(&once, &pos, focus, &mask);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn conversion_keeps_untouched_tokens(len in 3usize..15, cut in 0usize..100, role_i in 0usize..4) {
                // focus verb at 0, optional other-chain-event span later
                let tokens: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
                let start = 1 + cut % (len - 1);
                let s = SentenceText {
                    pos: vec![Pos::O; len],
                    tokens,
                    verb_index: 0,
                    event_spans: vec![
                        EventSpan { event: 0, start: 0, end: 1 },
                        EventSpan { event: 1, start, end: len },
                    ],
                    focus_event: 0,
                };
                let role = [Role::Subj, Role::Obj, Role::Iobj, Role::None][role_i];
                let c = convert_aligned(&s, 0, role).unwrap();
                let kept = c.tokens.iter().filter(|t| !vocab::is_reserved(t)).count();
                prop_assert_eq!(kept, start);
                prop_assert_eq!(&c.tokens[c.verb_index], "t0");
            }
        }
    }
}
