//! Vocabulary extension.
//!
//! [`continued_extend`] resumes BPE merge learning on top of an existing
//! tokenizer, so every new token is produced by a merge that actually fires.
//! [`naive_extend`] trains a separate tokenizer and copies its novel tokens
//! over, which is the baseline that leaves tokens unreachable.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::MergeGraph;
use crate::model::{Mode, ModelParts, TokenId, TokenizerModel};
use crate::segments::SegmentCounts;
use crate::trainer::{alphabet_model, chars_by_frequency, Learner, TrainerConfig};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExtensionReport {
    /// In the order they were added; they occupy the tail of the id space.
    pub added_tokens: Vec<TokenId>,
    pub added_merges: usize,
    pub skipped_invalid: usize,
    pub chars_added_for_coverage: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveStrategy {
    /// Give each added token the merge the auxiliary tokenizer produces it
    /// with, adding missing operands first.
    Regen,
    /// Copy the auxiliary merges whose outputs were added, in their order.
    AppendMergeList,
}

fn finish(
    requested: usize,
    model: TokenizerModel,
    report: ExtensionReport,
) -> Result<(TokenizerModel, ExtensionReport)> {
    if report.added_tokens.len() < requested {
        return Err(Error::Exhausted {
            requested,
            partial: Box::new((model, report)),
        });
    }
    Ok((model, report))
}

/// Adds up to `n_new` tokens to `model` by continuing BPE training on
/// `segments`, which must be normalized and pre-tokenized with `model`'s
/// configuration.
///
/// SentencePiece-style models with `character_coverage` first receive the
/// corpus characters they lack; those count towards `n_new`. Returns
/// [`Error::Exhausted`] carrying the partial result when no further pair
/// qualifies before `n_new` is reached.
pub fn continued_extend(
    model: &TokenizerModel,
    segments: &SegmentCounts,
    n_new: usize,
    cfg: &TrainerConfig,
) -> Result<(TokenizerModel, ExtensionReport)> {
    let mut report = ExtensionReport::default();
    if n_new == 0 {
        return Ok((model.clone(), report));
    }

    let mut parts = model.to_parts();
    if model.mode() == Mode::SentencePiece && cfg.character_coverage {
        for c in chars_by_frequency(segments) {
            if report.added_tokens.len() == n_new {
                break;
            }
            let mut buf = [0u8; 4];
            let bytes = c.encode_utf8(&mut buf).as_bytes();
            if !parts.vocab.contains(bytes) {
                report.added_tokens.push(parts.vocab.push(bytes)?);
                report.chars_added_for_coverage += 1;
            }
        }
    }
    let start = if report.added_tokens.is_empty() {
        model.clone()
    } else {
        TokenizerModel::new(parts.clone())?
    };

    let mut learner = Learner::new(&start, segments, cfg)?;
    while report.added_tokens.len() < n_new {
        let Some(m) = learner.step() else { break };
        parts.merges.push((m.left, m.right));
        report.added_tokens.push(m.output);
    }
    report.added_merges = learner.learned.len();
    report.skipped_invalid = learner.skipped_invalid;
    parts.vocab = learner.vocab;

    finish(n_new, TokenizerModel::new(parts)?, report)
}

/// Adds up to `n_new` tokens taken from an auxiliary tokenizer trained from
/// scratch on `segments` with the same mode.
///
/// The auxiliary tokenizer is trained just far enough to supply `n_new`
/// tokens absent from `model`, in its own vocabulary order. Its atomic
/// tokens are only considered for SentencePiece-style models; for byte-level
/// models they are the 256 bytes.
pub fn naive_extend(
    model: &TokenizerModel,
    segments: &SegmentCounts,
    n_new: usize,
    strategy: NaiveStrategy,
    cfg: &TrainerConfig,
) -> Result<(TokenizerModel, ExtensionReport)> {
    if n_new == 0 {
        return Ok((model.clone(), ExtensionReport::default()));
    }
    let aux_cfg = TrainerConfig {
        mode: model.mode(),
        ..cfg.clone()
    };
    let aux_alphabet = alphabet_model(segments, &aux_cfg)?;
    let mut learner = Learner::new(&aux_alphabet, segments, &aux_cfg)?;
    let mut ext = Extender {
        parts: model.to_parts(),
        report: ExtensionReport::default(),
        n_new,
    };

    if model.mode() == Mode::SentencePiece {
        for (id, bytes) in aux_alphabet.vocab().iter() {
            if !aux_alphabet.vocab().is_special(id) && !ext.parts.vocab.contains(bytes) {
                if ext.full() {
                    break;
                }
                ext.add_atom(bytes)?;
            }
        }
    }

    // aux tokens in creation order, each with the merge producing it
    let mut aux_tokens: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
    let mut append_merges: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    while !ext.full() {
        let Some(m) = learner.step() else { break };
        let piece = |id| learner.vocab.token(id).expect("learned ids exist").to_vec();
        let (l, r, out) = (piece(m.left), piece(m.right), piece(m.output));
        aux_tokens.push((l.clone(), r.clone(), out.clone()));
        if ext.parts.vocab.contains(&out) {
            continue;
        }
        match strategy {
            NaiveStrategy::Regen => {
                ext.add_with_scaffold(&out, &aux_tokens)?;
            }
            NaiveStrategy::AppendMergeList => {
                ext.add_atom(&out)?;
                append_merges.push((l, r));
            }
        }
    }
    for (l, r) in append_merges {
        if let (Some(l), Some(r)) = (ext.parts.vocab.id(&l), ext.parts.vocab.id(&r)) {
            ext.parts.merges.push((l, r));
            ext.report.added_merges += 1;
        }
    }
    finish(n_new, TokenizerModel::new(ext.parts)?, ext.report)
}

struct Extender {
    parts: ModelParts,
    report: ExtensionReport,
    n_new: usize,
}

impl Extender {
    fn full(&self) -> bool {
        self.report.added_tokens.len() >= self.n_new
    }

    fn add_atom(&mut self, bytes: &[u8]) -> Result<TokenId> {
        let id = self.parts.vocab.push(bytes)?;
        self.report.added_tokens.push(id);
        let single_char = std::str::from_utf8(bytes).is_ok_and(|s| s.chars().count() == 1);
        if self.parts.mode == Mode::SentencePiece && single_char {
            self.report.chars_added_for_coverage += 1;
        }
        Ok(id)
    }

    /// Adds `token` with its auxiliary merge, first adding any operand the
    /// extended vocabulary lacks. Stops silently once the budget is spent.
    fn add_with_scaffold(
        &mut self,
        token: &[u8],
        aux: &[(Vec<u8>, Vec<u8>, Vec<u8>)],
    ) -> Result<Option<TokenId>> {
        if let Some(id) = self.parts.vocab.id(token) {
            return Ok(Some(id));
        }
        let split = aux.iter().find(|(_, _, out)| out == token);
        let Some((l, r, _)) = split else {
            if self.full() {
                return Ok(None);
            }
            return self.add_atom(token).map(Some);
        };
        let (Some(l), Some(r)) = (
            self.add_with_scaffold(l, aux)?,
            self.add_with_scaffold(r, aux)?,
        ) else {
            return Ok(None);
        };
        if self.full() {
            return Ok(None);
        }
        let id = self.parts.vocab.push(token)?;
        self.report.added_tokens.push(id);
        self.parts.merges.push((l, r));
        self.report.added_merges += 1;
        Ok(Some(id))
    }
}

/// Tokens of `model` that carry no producing merge (after extension they
/// are the atoms added for coverage, or tokens naive extension could not
/// wire up).
pub fn tokens_without_merge(model: &TokenizerModel, tokens: &[TokenId]) -> Result<Vec<TokenId>> {
    let graph = MergeGraph::build(model, &Default::default())?;
    Ok(tokens
        .iter()
        .copied()
        .filter(|&t| graph.token_split(t).is_none())
        .collect())
}
