//! BPE training and the pair-counting machinery shared with extension.
//!
//! Training from scratch is continued training from the bare alphabet: both
//! go through [`Learner`], which keeps pair counts incrementally and only
//! revisits the segments that contain the pair being merged.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use unicode_script::{Script, UnicodeScript};

use crate::error::{Error, Result};
use crate::model::{Mode, ModelParts, TokenId, TokenizerModel, Vocab, WORD_MARKER};
use crate::segments::SegmentCounts;

pub type Pair = (TokenId, TokenId);

/// Adjacent-pair frequencies of a tokenized corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub counts: FxHashMap<Pair, u64>,
    pub total_segments: u64,
}

impl PairCounts {
    pub fn get(&self, pair: Pair) -> u64 {
        self.counts.get(&pair).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn merged(mut self, other: PairCounts) -> PairCounts {
        for (p, c) in other.counts {
            *self.counts.entry(p).or_insert(0) += c;
        }
        self.total_segments += other.total_segments;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainerConfig {
    pub target_vocab_size: usize,
    pub min_pair_frequency: u64,
    pub mode: Mode,
    /// Bytes for byte-level models, chars for SentencePiece-style ones.
    pub max_token_length: Option<usize>,
    /// SentencePiece-style: add corpus characters missing from the
    /// vocabulary as atomic tokens before merging.
    pub character_coverage: bool,
    /// Placed at the start of a fresh vocabulary. A `<unk>` entry becomes
    /// the unknown token of SentencePiece-style models.
    pub special_tokens: Vec<String>,
}

impl TrainerConfig {
    pub fn new(mode: Mode, target_vocab_size: usize) -> Self {
        Self {
            target_vocab_size,
            min_pair_frequency: 2,
            mode,
            max_token_length: mode.default_max_token_length(),
            character_coverage: true,
            special_tokens: match mode {
                Mode::ByteLevel => Vec::new(),
                Mode::SentencePiece => vec!["<unk>".to_owned()],
            },
        }
    }

    pub fn with_min_pair_frequency(mut self, n: u64) -> Self {
        self.min_pair_frequency = n;
        self
    }
}

/// Tokenizes every segment with `model` (merge skipping off) and counts
/// adjacent token pairs.
pub fn count_pairs(model: &TokenizerModel, segments: &SegmentCounts) -> Result<PairCounts> {
    let items: Vec<(&[u8], u64)> = segments.iter().collect();
    items
        .par_chunks(512)
        .map(|chunk| {
            let mut local = PairCounts::default();
            let mut ids = Vec::new();
            for &(seg, freq) in chunk {
                ids.clear();
                model.tokenize_segment_into(seg, false, &mut ids)?;
                for w in ids.windows(2) {
                    *local.counts.entry((w[0], w[1])).or_insert(0) += freq;
                }
                local.total_segments += freq;
            }
            Ok(local)
        })
        .try_reduce(PairCounts::default, |a, b| Ok(a.merged(b)))
}

/// Whether `left + right` is a token the underlying training implementation
/// could have produced.
///
/// Byte-level: only the length bound applies. SentencePiece-style: the
/// word-boundary marker may only start a token, and a token may not mix
/// Unicode scripts (Common and Inherited combine with anything).
pub fn is_valid_merge(mode: Mode, left: &[u8], right: &[u8], cfg: &TrainerConfig) -> bool {
    if let Some(max) = cfg.max_token_length {
        if mode.token_length(left) + mode.token_length(right) > max {
            return false;
        }
    }
    match mode {
        Mode::ByteLevel => true,
        Mode::SentencePiece => {
            let (Ok(l), Ok(r)) = (std::str::from_utf8(left), std::str::from_utf8(right)) else {
                return false;
            };
            if r.contains(WORD_MARKER) || l.chars().skip(1).any(|c| c == WORD_MARKER) {
                return false;
            }
            let mut script = None;
            for c in l.chars().chain(r.chars()) {
                match c.script() {
                    Script::Common | Script::Inherited => {}
                    s => match script {
                        None => script = Some(s),
                        Some(prev) if prev != s => return false,
                        Some(_) => {}
                    },
                }
            }
            true
        }
    }
}

/// A pair chosen for merging, with its frequency at selection time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeCandidate {
    pub left: TokenId,
    pub right: TokenId,
    pub count: u64,
}

/// Tokens that never take part in new merges: specials, the unknown token
/// and byte-fallback tokens.
pub(crate) fn blocked_ids(model: &TokenizerModel) -> FxHashSet<TokenId> {
    let mut blocked: FxHashSet<TokenId> = model.vocab().specials().iter().copied().collect();
    blocked.extend(model.unk_token());
    if model.byte_fallback() {
        blocked.extend((0..model.vocab_size() as TokenId).filter(|&t| model.is_byte_fallback_token(t)));
    }
    blocked
}

/// Whether `(left, right)` may become a new merge of a model with `vocab`:
/// neither side is blocked, the merge is valid, and the concatenation is
/// not already a token.
pub(crate) fn is_eligible(
    vocab: &Vocab,
    blocked: &FxHashSet<TokenId>,
    mode: Mode,
    (left, right): Pair,
    cfg: &TrainerConfig,
    buf: &mut Vec<u8>,
) -> bool {
    if blocked.contains(&left) || blocked.contains(&right) {
        return false;
    }
    let (Some(l), Some(r)) = (vocab.token(left), vocab.token(right)) else {
        return false;
    };
    if !is_valid_merge(mode, l, r, cfg) {
        return false;
    }
    buf.clear();
    buf.extend_from_slice(l);
    buf.extend_from_slice(r);
    !vocab.contains(buf)
}

/// The most frequent eligible pair with at least `min_pair_frequency`
/// occurrences; ties go to the smaller `(left, right)`.
pub fn select_next_merge(
    pc: &PairCounts,
    model: &TokenizerModel,
    cfg: &TrainerConfig,
) -> Option<MergeCandidate> {
    let mut buf = Vec::new();
    let blocked = blocked_ids(model);
    pc.counts
        .iter()
        .filter(|&(_, &c)| c >= cfg.min_pair_frequency.max(1))
        .filter(|&(&p, _)| is_eligible(model.vocab(), &blocked, model.mode(), p, cfg, &mut buf))
        .max_by_key(|&(&p, &c)| (c, Reverse(p)))
        .map(|(&(left, right), &count)| MergeCandidate { left, right, count })
}

/// A fresh model holding only the alphabet: the configured special tokens,
/// then all 256 bytes (byte-level) or the corpus characters by descending
/// frequency (SentencePiece-style).
pub fn alphabet_model(segments: &SegmentCounts, cfg: &TrainerConfig) -> Result<TokenizerModel> {
    let mut vocab = Vocab::new();
    for s in &cfg.special_tokens {
        let id = vocab.push(s.as_bytes())?;
        vocab.mark_special(id)?;
    }
    match cfg.mode {
        Mode::ByteLevel => {
            for b in 0..=255u8 {
                if !vocab.contains(&[b]) {
                    vocab.push(vec![b])?;
                }
            }
        }
        Mode::SentencePiece => {
            for c in chars_by_frequency(segments) {
                let mut buf = [0u8; 4];
                let bytes = c.encode_utf8(&mut buf).as_bytes();
                if !vocab.contains(bytes) {
                    vocab.push(bytes)?;
                }
            }
        }
    }
    let unk = vocab.id(b"<unk>").filter(|_| cfg.mode == Mode::SentencePiece);
    let mut parts = ModelParts::new(cfg.mode, vocab);
    parts.max_token_length = cfg.max_token_length;
    parts.unk_token = unk;
    TokenizerModel::new(parts)
}

/// A model with no vocabulary, useful only to normalize and pre-tokenize
/// documents the way a fresh model of `mode` would.
pub fn segmenter(mode: Mode) -> TokenizerModel {
    TokenizerModel::new(ModelParts::new(mode, Vocab::new())).expect("default configuration is valid")
}

/// Characters of the corpus, most frequent first, ties by code point.
pub(crate) fn chars_by_frequency(segments: &SegmentCounts) -> Vec<char> {
    let mut freq: FxHashMap<char, u64> = FxHashMap::default();
    for (seg, n) in segments.iter() {
        for c in String::from_utf8_lossy(seg).chars() {
            *freq.entry(c).or_insert(0) += n;
        }
    }
    let mut chars: Vec<(char, u64)> = freq.into_iter().collect();
    chars.sort_unstable_by_key(|&(c, n)| (Reverse(n), c));
    chars.into_iter().map(|(c, _)| c).collect()
}

/// Trains a BPE model from scratch until `target_vocab_size` tokens exist
/// or no pair qualifies any more.
pub fn train_bpe(segments: &SegmentCounts, cfg: &TrainerConfig) -> Result<TokenizerModel> {
    if segments.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let base = alphabet_model(segments, cfg)?;
    if cfg.target_vocab_size < base.vocab_size() {
        return Err(Error::TargetTooSmall {
            target: cfg.target_vocab_size,
            alphabet: base.vocab_size(),
        });
    }
    let n_new = cfg.target_vocab_size - base.vocab_size();
    match crate::extension::continued_extend(&base, segments, n_new, cfg) {
        Ok((model, _)) => Ok(model),
        Err(Error::Exhausted { partial, .. }) => Ok(partial.0),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LearnedMerge {
    pub left: TokenId,
    pub right: TokenId,
    pub output: TokenId,
    pub count: u64,
}

/// Incremental BPE merge learner over a segment multiset.
pub(crate) struct Learner<'c> {
    cfg: &'c TrainerConfig,
    mode: Mode,
    blocked: FxHashSet<TokenId>,
    pub(crate) vocab: Vocab,
    pub(crate) learned: Vec<LearnedMerge>,
    pub(crate) skipped_invalid: usize,
    words: Vec<Vec<TokenId>>,
    freqs: Vec<u64>,
    counts: FxHashMap<Pair, u64>,
    /// Segments that may contain each pair; entries can be stale.
    locations: FxHashMap<Pair, Vec<u32>>,
    heap: BinaryHeap<(u64, Reverse<Pair>)>,
    rejected: FxHashSet<Pair>,
    visited: Vec<u32>,
    stamp: u32,
    buf: Vec<u8>,
}

impl<'c> Learner<'c> {
    /// Tokenizes the corpus with `model` (merge skipping off) and indexes
    /// its pairs.
    pub(crate) fn new(
        model: &TokenizerModel,
        segments: &SegmentCounts,
        cfg: &'c TrainerConfig,
    ) -> Result<Self> {
        let sorted = segments.par_sorted();
        let words: Vec<Vec<TokenId>> = sorted
            .par_iter()
            .map(|(seg, _)| model.tokenize_segment(seg, false))
            .collect::<Result<_>>()?;
        let freqs: Vec<u64> = sorted.iter().map(|&(_, f)| f).collect();

        let mut counts: FxHashMap<Pair, u64> = FxHashMap::default();
        let mut locations: FxHashMap<Pair, Vec<u32>> = FxHashMap::default();
        for (i, (w, &f)) in words.iter().zip(&freqs).enumerate() {
            for p in w.windows(2) {
                let pair = (p[0], p[1]);
                *counts.entry(pair).or_insert(0) += f;
                let locs = locations.entry(pair).or_default();
                if locs.last() != Some(&(i as u32)) {
                    locs.push(i as u32);
                }
            }
        }
        let min = cfg.min_pair_frequency.max(1);
        let heap = counts
            .iter()
            .filter(|&(_, &c)| c >= min)
            .map(|(&p, &c)| (c, Reverse(p)))
            .collect();

        Ok(Self {
            cfg,
            mode: model.mode(),
            blocked: blocked_ids(model),
            vocab: model.vocab().clone(),
            learned: Vec::new(),
            skipped_invalid: 0,
            visited: vec![0; words.len()],
            words,
            freqs,
            counts,
            locations,
            heap,
            rejected: FxHashSet::default(),
            stamp: 0,
            buf: Vec::new(),
        })
    }

    /// Current pair counts, for checking against a recount.
    #[cfg(test)]
    pub(crate) fn pair_counts(&self) -> &FxHashMap<Pair, u64> {
        &self.counts
    }

    /// Current tokenization of every distinct segment.
    #[cfg(test)]
    pub(crate) fn words(&self) -> impl Iterator<Item = (&[TokenId], u64)> + '_ {
        self.words.iter().map(|w| &w[..]).zip(self.freqs.iter().copied())
    }

    /// Selects, records and applies the next merge.
    pub(crate) fn step(&mut self) -> Option<LearnedMerge> {
        loop {
            let (count, Reverse(pair)) = self.heap.pop()?;
            if self.counts.get(&pair) != Some(&count) || self.rejected.contains(&pair) {
                continue;
            }
            if !is_eligible(&self.vocab, &self.blocked, self.mode, pair, self.cfg, &mut self.buf) {
                self.rejected.insert(pair);
                self.skipped_invalid += 1;
                continue;
            }
            let output = self
                .vocab
                .push(self.buf.clone())
                .expect("eligible pairs produce new tokens");
            self.apply(pair, output);
            let merge = LearnedMerge {
                left: pair.0,
                right: pair.1,
                output,
                count,
            };
            self.learned.push(merge);
            return Some(merge);
        }
    }

    fn apply(&mut self, pair: Pair, output: TokenId) {
        let Some(locs) = self.locations.remove(&pair) else {
            return;
        };
        self.stamp += 1;
        let mut delta: FxHashMap<Pair, i64> = FxHashMap::default();
        let mut merged = Vec::new();
        for wi in locs {
            let wi_us = wi as usize;
            if self.visited[wi_us] == self.stamp {
                continue;
            }
            self.visited[wi_us] = self.stamp;
            let word = &self.words[wi_us];
            if !word.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            let f = self.freqs[wi_us] as i64;
            for p in word.windows(2) {
                *delta.entry((p[0], p[1])).or_insert(0) -= f;
            }
            merged.clear();
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    merged.push(output);
                    i += 2;
                } else {
                    merged.push(word[i]);
                    i += 1;
                }
            }
            for p in merged.windows(2) {
                let np = (p[0], p[1]);
                *delta.entry(np).or_insert(0) += f;
                if np.0 == output || np.1 == output {
                    let l = self.locations.entry(np).or_default();
                    if l.last() != Some(&wi) {
                        l.push(wi);
                    }
                }
            }
            self.words[wi_us].clone_from(&merged);
        }

        let min = self.cfg.min_pair_frequency.max(1);
        let mut changed: Vec<(Pair, i64)> = delta.into_iter().filter(|&(_, d)| d != 0).collect();
        changed.sort_unstable();
        for (p, d) in changed {
            let entry = self.counts.entry(p).or_insert(0);
            *entry = (*entry as i64 + d) as u64;
            let c = *entry;
            if c == 0 {
                self.counts.remove(&p);
            } else if c >= min && !self.rejected.contains(&p) {
                self.heap.push((c, Reverse(p)));
            }
        }
    }
}
