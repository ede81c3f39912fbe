//! BPE tokenizer representation.
//!
//! A [`TokenizerModel`] owns the vocabulary, the ordered merge list and the
//! text-processing configuration. It is immutable once built; every
//! operation that changes a tokenizer (extension, pruning) produces a new
//! model through [`ModelParts`].

mod encode;
mod normalize;
mod pretokenize;

use std::collections::BTreeSet;
use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::byte_units;
use crate::error::{Error, Result};

pub use normalize::NormalizerConfig;
pub use pretokenize::{PreTokenizerConfig, PreTokenizerKind, GPT2_PATTERN};

use pretokenize::Splitter;

pub type TokenId = u32;

/// Word-boundary marker of SentencePiece-style vocabularies (U+2581).
pub const WORD_MARKER: char = '\u{2581}';

/// Default `max_token_length` of SentencePiece-style training, in chars.
pub const SENTENCEPIECE_MAX_TOKEN_LENGTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Tokens are raw byte strings; the 256 single bytes are the alphabet.
    ByteLevel,
    /// Tokens are UTF-8 strings over characters, words carry a leading `▁`.
    #[serde(rename = "sentencepiece")]
    SentencePiece,
}

impl Mode {
    pub fn default_max_token_length(self) -> Option<usize> {
        match self {
            Mode::ByteLevel => None,
            Mode::SentencePiece => Some(SENTENCEPIECE_MAX_TOKEN_LENGTH),
        }
    }

    /// Length of a token in the unit `max_token_length` is measured in:
    /// bytes for byte-level models, chars for SentencePiece-style ones.
    pub fn token_length(self, bytes: &[u8]) -> usize {
        match self {
            Mode::ByteLevel => bytes.len(),
            Mode::SentencePiece => String::from_utf8_lossy(bytes).chars().count(),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::ByteLevel => "byte_level",
            Mode::SentencePiece => "sentencepiece",
        })
    }
}

/// Bijection between token contents and dense ids `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Box<[u8]>>,
    ids: FxHashMap<Box<[u8]>, TokenId>,
    special: BTreeSet<TokenId>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I, T>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<Vec<u8>>,
    {
        let mut vocab = Self::new();
        for t in tokens {
            vocab.push(t.into())?;
        }
        Ok(vocab)
    }

    /// Appends a token and returns its id.
    pub fn push(&mut self, bytes: impl Into<Vec<u8>>) -> Result<TokenId> {
        let bytes: Box<[u8]> = bytes.into().into_boxed_slice();
        if bytes.is_empty() {
            return Err(Error::inconsistent("empty token"));
        }
        if self.ids.contains_key(&bytes) {
            return Err(Error::inconsistent(format!(
                "duplicate token {:?}",
                String::from_utf8_lossy(&bytes)
            )));
        }
        let id = TokenId::try_from(self.tokens.len())
            .map_err(|_| Error::inconsistent("vocabulary exceeds u32 ids"))?;
        self.ids.insert(bytes.clone(), id);
        self.tokens.push(bytes);
        Ok(id)
    }

    pub fn mark_special(&mut self, id: TokenId) -> Result<()> {
        if id as usize >= self.tokens.len() {
            return Err(Error::UnknownId(id));
        }
        self.special.insert(id);
        Ok(())
    }

    pub fn id(&self, bytes: &[u8]) -> Option<TokenId> {
        self.ids.get(bytes).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(|t| &**t)
    }

    pub fn contains(&self, bytes: &[u8]) -> bool {
        self.ids.contains_key(bytes)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(&id)
    }

    pub fn specials(&self) -> &BTreeSet<TokenId> {
        &self.special
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (TokenId, &[u8])> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as TokenId, &**t))
    }
}

/// One merge `left + right -> output`; its rank is its position in
/// [`TokenizerModel::merges`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MergeRule {
    pub left: TokenId,
    pub right: TokenId,
    pub output: TokenId,
}

/// Everything needed to build a [`TokenizerModel`].
#[derive(Clone, Debug)]
pub struct ModelParts {
    pub vocab: Vocab,
    /// Ordered `(left, right)` pairs; the output is looked up by content.
    pub merges: Vec<(TokenId, TokenId)>,
    pub mode: Mode,
    pub pre_tokenizer: PreTokenizerConfig,
    pub normalizer: NormalizerConfig,
    pub ignore_merges: bool,
    pub max_token_length: Option<usize>,
    pub unk_token: Option<TokenId>,
    /// SentencePiece-style only: unknown chars become `<0xHH>` byte tokens.
    pub byte_fallback: bool,
}

impl ModelParts {
    /// Defaults for a fresh model of `mode` over `vocab`.
    pub fn new(mode: Mode, vocab: Vocab) -> Self {
        let (pre_tokenizer, normalizer) = match mode {
            Mode::ByteLevel => (PreTokenizerConfig::gpt2(), NormalizerConfig::Identity),
            Mode::SentencePiece => (
                PreTokenizerConfig::whitespace(),
                NormalizerConfig::sentencepiece(),
            ),
        };
        Self {
            vocab,
            merges: Vec::new(),
            mode,
            pre_tokenizer,
            normalizer,
            ignore_merges: false,
            max_token_length: mode.default_max_token_length(),
            unk_token: None,
            byte_fallback: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TokenizerModel {
    vocab: Vocab,
    merges: Vec<MergeRule>,
    /// `(left, right) -> (rank, output)`, first occurrence wins.
    pair_ranks: FxHashMap<(TokenId, TokenId), (u32, TokenId)>,
    mode: Mode,
    pre_tokenizer: PreTokenizerConfig,
    normalizer: NormalizerConfig,
    ignore_merges: bool,
    max_token_length: Option<usize>,
    unk_token: Option<TokenId>,
    byte_fallback: bool,
    splitter: Splitter,
    /// Byte-level: id of each single-byte token. SentencePiece-style with
    /// byte fallback: id of each `<0xHH>` token.
    byte_ids: Box<[Option<TokenId>; 256]>,
    /// Byte-level: rank of the merge joining two single-byte tokens, indexed
    /// by `first << 8 | second`.
    byte_pair_ranks: Option<Box<[u32]>>,
}

impl TokenizerModel {
    pub fn new(parts: ModelParts) -> Result<Self> {
        let ModelParts {
            vocab,
            merges: raw_merges,
            mode,
            pre_tokenizer,
            normalizer,
            ignore_merges,
            max_token_length,
            unk_token,
            byte_fallback,
        } = parts;

        match (mode, &normalizer) {
            (Mode::ByteLevel, NormalizerConfig::Identity)
            | (Mode::SentencePiece, NormalizerConfig::SentencePiece { .. }) => {}
            _ => {
                return Err(Error::inconsistent(format!(
                    "normalizer {normalizer:?} does not match mode {mode}"
                )))
            }
        }
        if pre_tokenizer.byte_mapping && mode != Mode::ByteLevel {
            return Err(Error::inconsistent(
                "byte mapping is only valid for byte-level models",
            ));
        }
        if byte_fallback && mode != Mode::SentencePiece {
            return Err(Error::inconsistent(
                "byte fallback is only valid for SentencePiece-style models",
            ));
        }
        if mode == Mode::SentencePiece {
            for (id, t) in vocab.iter() {
                if std::str::from_utf8(t).is_err() {
                    return Err(Error::inconsistent(format!(
                        "token {id} is not valid UTF-8 in a SentencePiece-style model"
                    )));
                }
            }
        }
        if let Some(unk) = unk_token {
            if unk as usize >= vocab.len() {
                return Err(Error::inconsistent(format!("unk token {unk} out of range")));
            }
        }

        let mut merges = Vec::with_capacity(raw_merges.len());
        let mut pair_ranks =
            FxHashMap::with_capacity_and_hasher(raw_merges.len(), Default::default());
        let mut buf = Vec::new();
        for (rank, &(left, right)) in raw_merges.iter().enumerate() {
            let (Some(l), Some(r)) = (vocab.token(left), vocab.token(right)) else {
                return Err(Error::inconsistent(format!(
                    "merge {rank} references an id outside the vocabulary"
                )));
            };
            buf.clear();
            buf.extend_from_slice(l);
            buf.extend_from_slice(r);
            let Some(output) = vocab.id(&buf) else {
                return Err(Error::inconsistent(format!(
                    "merge {rank} produces {:?} which is not in the vocabulary",
                    String::from_utf8_lossy(&buf)
                )));
            };
            let rank = u32::try_from(rank).map_err(|_| Error::inconsistent("too many merges"))?;
            pair_ranks.entry((left, right)).or_insert((rank, output));
            merges.push(MergeRule {
                left,
                right,
                output,
            });
        }

        let splitter = Splitter::compile(&pre_tokenizer.kind)?;

        let mut byte_ids = Box::new([None; 256]);
        for b in 0..=255u8 {
            byte_ids[b as usize] = match mode {
                Mode::ByteLevel => vocab.id(&[b]),
                Mode::SentencePiece if byte_fallback => {
                    vocab.id(byte_fallback_token(b).as_bytes())
                }
                Mode::SentencePiece => None,
            };
        }

        let byte_pair_ranks = (mode == Mode::ByteLevel).then(|| {
            let mut table = vec![u32::MAX; 1 << 16].into_boxed_slice();
            let single = |id: TokenId| match vocab.token(id) {
                Some(&[b]) => Some(b as usize),
                _ => None,
            };
            for (&(l, r), &(rank, _)) in &pair_ranks {
                if let (Some(a), Some(b)) = (single(l), single(r)) {
                    table[a << 8 | b] = rank;
                }
            }
            table
        });

        Ok(Self {
            vocab,
            merges,
            pair_ranks,
            byte_pair_ranks,
            mode,
            pre_tokenizer,
            normalizer,
            ignore_merges,
            max_token_length,
            unk_token,
            byte_fallback,
            splitter,
            byte_ids,
        })
    }

    /// Decomposes the model back into its parts.
    pub fn to_parts(&self) -> ModelParts {
        ModelParts {
            vocab: self.vocab.clone(),
            merges: self.merges.iter().map(|m| (m.left, m.right)).collect(),
            mode: self.mode,
            pre_tokenizer: self.pre_tokenizer.clone(),
            normalizer: self.normalizer.clone(),
            ignore_merges: self.ignore_merges,
            max_token_length: self.max_token_length,
            unk_token: self.unk_token,
            byte_fallback: self.byte_fallback,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    /// Rank and output of the merge for `(left, right)`, if any.
    pub fn merge_for(&self, left: TokenId, right: TokenId) -> Option<(u32, TokenId)> {
        self.pair_ranks.get(&(left, right)).copied()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn pre_tokenizer(&self) -> &PreTokenizerConfig {
        &self.pre_tokenizer
    }

    pub fn normalizer(&self) -> &NormalizerConfig {
        &self.normalizer
    }

    pub fn ignore_merges(&self) -> bool {
        self.ignore_merges
    }

    pub fn max_token_length(&self) -> Option<usize> {
        self.max_token_length
    }

    pub fn unk_token(&self) -> Option<TokenId> {
        self.unk_token
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    pub fn token_bytes(&self, id: TokenId) -> Result<&[u8]> {
        self.vocab.token(id).ok_or(Error::UnknownId(id))
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<TokenId> {
        self.vocab.id(bytes)
    }

    /// Whether `id` is one of the `<0xHH>` tokens used by byte fallback.
    pub fn is_byte_fallback_token(&self, id: TokenId) -> bool {
        self.byte_fallback
            && self
                .vocab
                .token(id)
                .and_then(parse_byte_fallback_token)
                .is_some()
    }

    /// Human-readable form of a token as it appears in tokenizer files:
    /// the byte-to-unit mapping for byte-level models, the UTF-8 text
    /// otherwise.
    pub fn display_token(&self, id: TokenId) -> String {
        match self.vocab.token(id) {
            Some(bytes) => self.display_bytes(bytes),
            None => format!("<id {id}>"),
        }
    }

    pub fn display_bytes(&self, bytes: &[u8]) -> String {
        match self.mode {
            Mode::ByteLevel => byte_units::encode(bytes),
            Mode::SentencePiece => String::from_utf8_lossy(bytes).into_owned(),
        }
    }

    /// Inverse of [`display_token`](Self::display_token).
    pub fn parse_display(&self, s: &str) -> Option<Vec<u8>> {
        match self.mode {
            Mode::ByteLevel => byte_units::decode(s),
            Mode::SentencePiece => Some(s.as_bytes().to_vec()),
        }
    }

    /// Ids of tokens that no merge produces.
    pub fn atomic_ids(&self) -> BTreeSet<TokenId> {
        let produced: BTreeSet<TokenId> = self.merges.iter().map(|m| m.output).collect();
        (0..self.vocab.len() as TokenId)
            .filter(|id| !produced.contains(id))
            .collect()
    }
}

pub(crate) fn byte_fallback_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

pub(crate) fn parse_byte_fallback_token(bytes: &[u8]) -> Option<u8> {
    let s = std::str::from_utf8(bytes).ok()?;
    let hex = s.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}
