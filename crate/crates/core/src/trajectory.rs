//! Tagged trajectory format exchanged between the local and cloud models.
//!
//! A trajectory is a sequence of tagged blocks:
//! `<think>…</think>`, `<message>…</message>`, `<agent-reply>…</agent-reply>`,
//! `<answer>…</answer>`. The grammar is:
//!
//! * the first block is a think block,
//! * every message block is immediately preceded by exactly one think block
//!   and immediately followed by exactly one agent-reply block,
//! * a complete trajectory ends with exactly one answer block,
//! * zero message blocks is legal,
//! * block text contains no tag delimiters (no nesting), and anything outside
//!   blocks other than inter-block whitespace is a format error.
//!
//! Parsing is a single forward pass reporting the first violated rule with
//! its byte offset. Inter-block whitespace is preserved by appending it to
//! the preceding block's text, so `parse(serialize(t)) == t` for every valid
//! trajectory.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four block kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    Think,
    Message,
    AgentReply,
    Answer,
}

/// Who emitted a segment's tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    LocalModel,
    CloudModel,
}

impl SegmentKind {
    pub fn open_tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "<think>",
            SegmentKind::Message => "<message>",
            SegmentKind::AgentReply => "<agent-reply>",
            SegmentKind::Answer => "<answer>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "</think>",
            SegmentKind::Message => "</message>",
            SegmentKind::AgentReply => "</agent-reply>",
            SegmentKind::Answer => "</answer>",
        }
    }

    /// Agent-reply blocks are injected by the cloud model, everything else is
    /// emitted locally.
    pub fn origin(self) -> Origin {
        match self {
            SegmentKind::AgentReply => Origin::CloudModel,
            _ => Origin::LocalModel,
        }
    }
}

const ALL_KINDS: [SegmentKind; 4] = [
    SegmentKind::Think,
    SegmentKind::Message,
    SegmentKind::AgentReply,
    SegmentKind::Answer,
];

/// One tagged block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
}

impl Segment {
    pub fn new(kind: SegmentKind, text: impl Into<String>) -> Self {
        Segment { kind, text: text.into() }
    }

    pub fn origin(&self) -> Origin {
        self.kind.origin()
    }
}

/// A complete, grammar-valid trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub query_id: String,
}

impl Trajectory {
    pub fn new(segments: Vec<Segment>) -> Self {
        Trajectory { segments, query_id: String::new() }
    }

    /// Number of interaction turns `n_r` = number of message blocks.
    pub fn n_requests(&self) -> usize {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Message).count()
    }

    pub fn answer_text(&self) -> Option<&str> {
        self.segments
            .iter()
            .rev()
            .find(|s| s.kind == SegmentKind::Answer)
            .map(|s| s.text.as_str())
    }

    pub fn message_texts(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Message)
            .map(|s| s.text.as_str())
            .collect()
    }

    /// Check the trajectory grammar over segment kinds and block texts.
    pub fn validate(&self) -> Result<(), InvalidTrajectory> {
        for seg in &self.segments {
            for kind in ALL_KINDS {
                if seg.text.contains(kind.open_tag()) || seg.text.contains(kind.close_tag()) {
                    return Err(InvalidTrajectory { rule: FormatRule::NestedTag });
                }
            }
        }
        let mut state = State::Start;
        for seg in &self.segments {
            state = state
                .accept(seg.kind)
                .map_err(|rule| InvalidTrajectory { rule })?;
        }
        match state {
            State::Done => Ok(()),
            State::AfterMessage => Err(InvalidTrajectory { rule: FormatRule::MissingAgentReply }),
            _ => Err(InvalidTrajectory { rule: FormatRule::NoAnswer }),
        }
    }
}

/// Grammar rule names used in format errors. `Display` yields the stable
/// kebab-case identifier asserted by tests and surfaced in logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatRule {
    MissingLeadingThink,
    MessageWithoutThink,
    MissingAgentReply,
    ReplyWithoutMessage,
    RepeatedTag,
    NestedTag,
    UnclosedTag,
    StrayContent,
    TrailingContent,
    NoAnswer,
}

impl fmt::Display for FormatRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormatRule::MissingLeadingThink => "missing-leading-think",
            FormatRule::MessageWithoutThink => "message-without-think",
            FormatRule::MissingAgentReply => "missing-agent-reply",
            FormatRule::ReplyWithoutMessage => "reply-without-message",
            FormatRule::RepeatedTag => "repeated-tag",
            FormatRule::NestedTag => "nested-tag",
            FormatRule::UnclosedTag => "unclosed-tag",
            FormatRule::StrayContent => "stray-content",
            FormatRule::TrailingContent => "trailing-content",
            FormatRule::NoAnswer => "no-answer",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("format error: {rule} at byte {byte_offset}")]
pub struct FormatError {
    pub rule: FormatRule,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid trajectory: {rule}")]
pub struct InvalidTrajectory {
    pub rule: FormatRule,
}

/// Why an episode ended without a parseable, complete trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncompleteReason {
    /// Token budget exhausted mid-generation.
    BudgetExhausted,
    /// The local model kept requesting past the turn limit.
    TurnLimit,
    /// The final text failed the grammar.
    Malformed(FormatError),
}

/// Episode outcome: either a complete trajectory or the raw text of a
/// truncated/malformed one. Downstream rewards treat `Incomplete` as a
/// format violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryOutcome {
    Complete(Trajectory),
    Incomplete { raw: String, reason: IncompleteReason },
}

impl TrajectoryOutcome {
    pub fn as_complete(&self) -> Option<&Trajectory> {
        match self {
            TrajectoryOutcome::Complete(t) => Some(t),
            TrajectoryOutcome::Incomplete { .. } => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Start,
    AfterThink,
    AfterMessage,
    AfterReply,
    Done,
}

impl State {
    /// Transition on an opening block kind; `Err` is the violated rule.
    fn accept(self, kind: SegmentKind) -> Result<State, FormatRule> {
        use SegmentKind::*;
        match (self, kind) {
            (State::Start, Think) => Ok(State::AfterThink),
            (State::Start, Message) => Err(FormatRule::MessageWithoutThink),
            (State::Start, AgentReply) => Err(FormatRule::ReplyWithoutMessage),
            (State::Start, Answer) => Err(FormatRule::MissingLeadingThink),
            (State::AfterThink, Message) => Ok(State::AfterMessage),
            (State::AfterThink, Answer) => Ok(State::Done),
            (State::AfterThink, Think) => Err(FormatRule::RepeatedTag),
            (State::AfterThink, AgentReply) => Err(FormatRule::ReplyWithoutMessage),
            (State::AfterMessage, AgentReply) => Ok(State::AfterReply),
            (State::AfterMessage, _) => Err(FormatRule::MissingAgentReply),
            (State::AfterReply, Think) => Ok(State::AfterThink),
            (State::AfterReply, Answer) => Ok(State::Done),
            (State::AfterReply, Message) => Err(FormatRule::MessageWithoutThink),
            (State::AfterReply, AgentReply) => Err(FormatRule::ReplyWithoutMessage),
            (State::Done, _) => Err(FormatRule::TrailingContent),
        }
    }
}

struct TagHit {
    kind: SegmentKind,
    closing: bool,
    start: usize,
    end: usize,
}

/// Scan for the next recognized tag delimiter at or after `from`. A bare `<`
/// that does not start one of the eight exact tags is ordinary content.
fn next_tag(raw: &str, from: usize) -> Option<TagHit> {
    let bytes = raw.as_bytes();
    let mut i = from;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let rest = &raw[i..];
            for kind in ALL_KINDS {
                if rest.starts_with(kind.open_tag()) {
                    return Some(TagHit { kind, closing: false, start: i, end: i + kind.open_tag().len() });
                }
                if rest.starts_with(kind.close_tag()) {
                    return Some(TagHit { kind, closing: true, start: i, end: i + kind.close_tag().len() });
                }
            }
        }
        i += 1;
    }
    None
}

fn first_non_ws(s: &str, from: usize, to: usize) -> Option<usize> {
    s[from..to]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map(|(i, _)| from + i)
}

/// Parse raw model text into a [`Trajectory`], or report the first violated
/// grammar rule with its byte offset.
pub fn parse(raw: &str) -> Result<Trajectory, FormatError> {
    let mut state = State::Start;
    let mut segments: Vec<Segment> = Vec::new();
    let mut pos = 0usize;
    // Open block: (kind, content start, opening tag offset).
    let mut open: Option<(SegmentKind, usize, usize)> = None;

    let fail = |rule: FormatRule, off: usize| Err(FormatError { rule, byte_offset: off });

    loop {
        let hit = next_tag(raw, pos);
        match open {
            Some((kind, content_start, tag_off)) => match hit {
                None => return fail(FormatRule::UnclosedTag, tag_off),
                Some(t) => {
                    if !t.closing || t.kind != kind {
                        return fail(FormatRule::NestedTag, t.start);
                    }
                    segments.push(Segment::new(kind, &raw[content_start..t.start]));
                    state = state.accept(kind).map_err(|rule| FormatError {
                        rule,
                        byte_offset: tag_off,
                    })?;
                    open = None;
                    pos = t.end;
                }
            },
            None => {
                let gap_end = hit.as_ref().map(|t| t.start).unwrap_or(raw.len());
                if let Some(off) = first_non_ws(raw, pos, gap_end) {
                    let rule = match state {
                        State::Start => FormatRule::MissingLeadingThink,
                        State::AfterMessage => FormatRule::MissingAgentReply,
                        State::Done => FormatRule::TrailingContent,
                        _ => FormatRule::StrayContent,
                    };
                    return fail(rule, off);
                }
                // Inter-block whitespace rides on the preceding block's text.
                if gap_end > pos {
                    if let Some(last) = segments.last_mut() {
                        last.text.push_str(&raw[pos..gap_end]);
                    }
                }
                match hit {
                    None => {
                        return match state {
                            State::Done => Ok(Trajectory::new(segments)),
                            State::Start => fail(FormatRule::MissingLeadingThink, raw.len()),
                            State::AfterMessage => fail(FormatRule::MissingAgentReply, raw.len()),
                            _ => fail(FormatRule::NoAnswer, raw.len()),
                        };
                    }
                    Some(t) if t.closing => {
                        let rule = match state {
                            State::Start => FormatRule::MissingLeadingThink,
                            State::AfterMessage => FormatRule::MissingAgentReply,
                            State::Done => FormatRule::TrailingContent,
                            _ => FormatRule::StrayContent,
                        };
                        return fail(rule, t.start);
                    }
                    Some(t) => {
                        // Opening tag: check the transition now so the error
                        // points at this tag, but only commit the state when
                        // the block closes.
                        if let Err(rule) = state.accept(t.kind) {
                            return fail(rule, t.start);
                        }
                        open = Some((t.kind, t.end, t.start));
                        pos = t.end;
                    }
                }
            }
        }
    }
}

/// Serialize a valid trajectory back to its tagged text form. Inverse of
/// [`parse`] on trajectories.
pub fn serialize(t: &Trajectory) -> Result<String, InvalidTrajectory> {
    t.validate()?;
    let mut out = String::new();
    for seg in &t.segments {
        out.push_str(seg.kind.open_tag());
        out.push_str(&seg.text);
        out.push_str(seg.kind.close_tag());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Vocabulary and tokenization
// ---------------------------------------------------------------------------

pub type TokenId = usize;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TokenizeError {
    /// A content symbol (or a non-canonical empty piece from doubled spaces)
    /// has no vocabulary entry.
    #[error("symbol not in vocabulary: {symbol:?}")]
    OutOfVocab { symbol: String },
}

/// Symbol vocabulary with dedicated single tokens for the eight tag
/// delimiters. Content text is canonical: symbols joined by single spaces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Build a vocabulary from content symbols; tag tokens are prepended
    /// automatically.
    pub fn new<I, S>(content_symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut symbols: Vec<String> = Vec::new();
        for kind in ALL_KINDS {
            symbols.push(kind.open_tag().to_string());
            symbols.push(kind.close_tag().to_string());
        }
        for s in content_symbols {
            let s = s.into();
            assert!(!symbols.contains(&s), "duplicate vocab symbol {s:?}");
            symbols.push(s);
        }
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { symbols, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: TokenId) -> &str {
        &self.symbols[id]
    }

    pub fn tag_id(&self, kind: SegmentKind, closing: bool) -> TokenId {
        let base = ALL_KINDS.iter().position(|k| *k == kind).unwrap();
        base * 2 + usize::from(closing)
    }

    pub fn is_tag(&self, id: TokenId) -> bool {
        id < 8
    }

    /// Tokenize canonical content text (single-space separated symbols).
    pub fn tokenize_text(&self, text: &str) -> Result<Vec<TokenId>, TokenizeError> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(' ')
            .map(|piece| {
                self.id(piece).ok_or_else(|| TokenizeError::OutOfVocab { symbol: piece.to_string() })
            })
            .collect()
    }

    /// Inverse of tokenization: tags verbatim, content symbols joined by
    /// single spaces, no space adjacent to tags.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev_content = false;
        for &id in ids {
            if self.is_tag(id) {
                out.push_str(&self.symbols[id]);
                prev_content = false;
            } else {
                if prev_content {
                    out.push(' ');
                }
                out.push_str(&self.symbols[id]);
                prev_content = true;
            }
        }
        out
    }
}

/// Token-level view of a trajectory with the per-token origin mask
/// (1 = emitted by the local model, 0 = injected observation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedTrajectory {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<u8>,
    /// `(kind, start, end)` spans with exclusive end, contiguous and covering
    /// all tokens.
    pub segment_spans: Vec<(SegmentKind, usize, usize)>,
}

impl TokenizedTrajectory {
    pub fn masked_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Indices of mask=1 positions in order.
    pub fn masked_positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (m == 1).then_some(i))
            .collect()
    }
}

/// Tokenize a valid trajectory and compute the origin mask: 0 exactly on
/// agent-reply spans including their tags, 1 elsewhere.
pub fn tokenize_with_mask(t: &Trajectory, vocab: &Vocab) -> Result<TokenizedTrajectory, TokenizeError> {
    let mut tokens = Vec::new();
    let mut mask = Vec::new();
    let mut spans = Vec::new();
    for seg in &t.segments {
        let start = tokens.len();
        let local = seg.origin() == Origin::LocalModel;
        let m = u8::from(local);
        tokens.push(vocab.tag_id(seg.kind, false));
        mask.push(m);
        for id in vocab.tokenize_text(&seg.text)? {
            tokens.push(id);
            mask.push(m);
        }
        tokens.push(vocab.tag_id(seg.kind, true));
        mask.push(m);
        spans.push((seg.kind, start, tokens.len()));
    }
    Ok(TokenizedTrajectory { tokens, mask, segment_spans: spans })
}
