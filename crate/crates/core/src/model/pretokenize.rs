use std::fmt;
use std::sync::Arc;

use regex_automata::{meta, Anchored, Input, PatternID};

use super::{Mode, TokenizerModel, WORD_MARKER};
use crate::error::{Error, Result};

/// GPT-2's pre-tokenizer pattern, the default for fresh byte-level models.
pub const GPT2_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// The whitespace tail shared by the GPT-2 / cl100k / Llama-3 patterns. It
/// is the only lookaround those patterns use, so it is emulated on top of
/// a finite-automaton engine instead of falling back to a backtracking engine.
const LOOKAHEAD_TAIL: &str = r"\s+(?!\S)|\s+";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PreTokenizerKind {
    /// Matches and the gaps between them both become segments.
    RegexSplit { pattern: String },
    /// Byte-level: split on whitespace, which is dropped.
    /// SentencePiece-style: start a new segment at every `▁`.
    WhitespaceSplit,
    /// The whole normalized text is one segment.
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreTokenizerConfig {
    pub kind: PreTokenizerKind,
    /// Byte-level models store tokens in the printable byte-unit alphabet.
    pub byte_mapping: bool,
}

impl PreTokenizerConfig {
    pub fn gpt2() -> Self {
        Self::regex(GPT2_PATTERN)
    }

    pub fn regex(pattern: &str) -> Self {
        Self {
            kind: PreTokenizerKind::RegexSplit {
                pattern: pattern.to_owned(),
            },
            byte_mapping: true,
        }
    }

    pub fn whitespace() -> Self {
        Self {
            kind: PreTokenizerKind::WhitespaceSplit,
            byte_mapping: false,
        }
    }

    pub fn none() -> Self {
        Self {
            kind: PreTokenizerKind::None,
            byte_mapping: false,
        }
    }
}

#[derive(Clone)]
pub(crate) enum Splitter {
    Regex(Arc<RegexSplitter>),
    Whitespace,
    None,
}

impl fmt::Debug for Splitter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Splitter::Regex(r) => write!(f, "Regex({})", r.source),
            Splitter::Whitespace => f.write_str("Whitespace"),
            Splitter::None => f.write_str("None"),
        }
    }
}

pub(crate) struct RegexSplitter {
    source: String,
    engine: Engine,
}

enum Engine {
    Plain {
        re: meta::Regex,
        /// Capture group of the rewritten whitespace tail, if any.
        tail: Option<usize>,
    },
    Fancy(fancy_regex::Regex),
}

impl RegexSplitter {
    pub(crate) fn new(pattern: &str) -> Result<Self> {
        let engine = if let Some(head) = pattern
            .strip_suffix(LOOKAHEAD_TAIL)
            .filter(|h| h.is_empty() || h.ends_with('|'))
            .and_then(|head| meta::Regex::new(&format!("{head}(?P<tail_ws>\\s+)")).ok())
        {
            let tail = head.group_info().to_index(PatternID::ZERO, "tail_ws");
            Engine::Plain { re: head, tail }
        } else if let Ok(re) = meta::Regex::new(pattern) {
            Engine::Plain { re, tail: None }
        } else {
            let re = fancy_regex::Regex::new(pattern)
                .map_err(|e| Error::InvalidPattern(e.to_string()))?;
            Engine::Fancy(re)
        };
        Ok(Self {
            source: pattern.to_owned(),
            engine,
        })
    }

    /// Calls `emit` with every match and every non-empty gap, in order.
    pub(crate) fn split<'a>(&self, text: &'a str, mut emit: impl FnMut(&'a str)) {
        let mut last = 0;
        match &self.engine {
            Engine::Plain { re, tail } => {
                let mut caps = re.create_captures();
                let mut pos = 0;
                while pos < text.len() {
                    // matches usually begin where the previous one ended,
                    // and an anchored search is much cheaper
                    let anchored = Input::new(text).range(pos..).anchored(Anchored::Yes);
                    let Some(m) = re.search(&anchored).or_else(|| re.search(&Input::new(text).range(pos..)))
                    else {
                        break;
                    };
                    let (start, mut end) = (m.start(), m.end());
                    if start == end {
                        pos = next_boundary(text, end);
                        continue;
                    }
                    if let Some(group) = *tail {
                        if end < text.len() && text[start..end].chars().all(char::is_whitespace) {
                            re.search_captures(&Input::new(text).range(start..).anchored(Anchored::Yes), &mut caps);
                            if caps.get_group(group).is_some() {
                                // `\s+(?!\S)`: give the last whitespace char
                                // back to the following token
                                let last_char = text[start..end]
                                    .char_indices()
                                    .last()
                                    .map_or(0, |(i, _)| i);
                                if last_char > 0 {
                                    end = start + last_char;
                                }
                            }
                        }
                    }
                    if start > last {
                        emit(&text[last..start]);
                    }
                    emit(&text[start..end]);
                    last = end;
                    pos = end;
                }
            }
            Engine::Fancy(re) => {
                for m in re.find_iter(text) {
                    let Ok(m) = m else { break };
                    if m.start() == m.end() {
                        continue;
                    }
                    if m.start() > last {
                        emit(&text[last..m.start()]);
                    }
                    emit(m.as_str());
                    last = m.end();
                }
            }
        }
        if last < text.len() {
            emit(&text[last..]);
        }
    }
}

fn next_boundary(text: &str, i: usize) -> usize {
    text[i..].chars().next().map_or(text.len(), |c| i + c.len_utf8())
}

impl Splitter {
    pub(crate) fn compile(kind: &PreTokenizerKind) -> Result<Self> {
        Ok(match kind {
            PreTokenizerKind::RegexSplit { pattern } => {
                Splitter::Regex(Arc::new(RegexSplitter::new(pattern)?))
            }
            PreTokenizerKind::WhitespaceSplit => Splitter::Whitespace,
            PreTokenizerKind::None => Splitter::None,
        })
    }
}

impl TokenizerModel {
    /// Splits normalized text into the segments merges operate within.
    pub fn pre_tokenize<'a>(&self, normalized: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        self.for_each_segment(normalized, |s| out.push(s));
        out
    }

    pub(crate) fn for_each_segment<'a>(&self, normalized: &'a str, mut emit: impl FnMut(&'a str)) {
        if normalized.is_empty() {
            return;
        }
        match (&self.splitter, self.mode) {
            (Splitter::Regex(re), _) => re.split(normalized, emit),
            (Splitter::Whitespace, Mode::ByteLevel) => {
                normalized.split_whitespace().for_each(emit);
            }
            (Splitter::Whitespace, Mode::SentencePiece) => {
                let mut start = 0;
                for (i, c) in normalized.char_indices() {
                    if c == WORD_MARKER && i > start {
                        emit(&normalized[start..i]);
                        start = i;
                    }
                }
                emit(&normalized[start..]);
            }
            (Splitter::None, _) => emit(normalized),
        }
    }
}
