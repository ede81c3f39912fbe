//! Prune orders and their application.
//!
//! The leaf-frequency order only ever removes tokens that no remaining merge
//! consumes, and the merge-based order reaches the same guarantee through
//! augmented counts. The naive-frequency and last-id orders are baselines
//! that can break merge paths.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::MergeGraph;
use crate::model::{ModelParts, TokenId, TokenizerModel, Vocab};
use crate::segments::SegmentCounts;

/// Token and merge frequencies of a corpus under a model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    /// Indexed by token id.
    pub tok_counts: Vec<u64>,
    /// Times each `(left, right)` merge fired.
    pub merge_counts: FxHashMap<(TokenId, TokenId), u64>,
    pub segments_seen: u64,
}

impl CorpusStats {
    fn zero(n: usize) -> Self {
        Self {
            tok_counts: vec![0; n],
            ..Default::default()
        }
    }

    pub fn tok_count(&self, id: TokenId) -> u64 {
        self.tok_counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn merge_count(&self, left: TokenId, right: TokenId) -> u64 {
        self.merge_counts.get(&(left, right)).copied().unwrap_or(0)
    }

    fn merged(mut self, other: CorpusStats) -> CorpusStats {
        for (a, b) in self.tok_counts.iter_mut().zip(other.tok_counts) {
            *a += b;
        }
        for (k, v) in other.merge_counts {
            *self.merge_counts.entry(k).or_insert(0) += v;
        }
        self.segments_seen += other.segments_seen;
        self
    }
}

/// Tokenizes every segment with merge skipping off, counting emitted tokens
/// and merge firings.
pub fn collect_stats(model: &TokenizerModel, segments: &SegmentCounts) -> Result<CorpusStats> {
    let n = model.vocab_size();
    let items: Vec<(&[u8], u64)> = segments.iter().collect();
    items
        .par_chunks(512)
        .map(|chunk| {
            let mut local = CorpusStats::zero(n);
            for &(seg, freq) in chunk {
                let ids = model.tokenize_segment_traced(seg, |m| {
                    *local.merge_counts.entry((m.left, m.right)).or_insert(0) += freq;
                })?;
                for id in ids {
                    local.tok_counts[id as usize] += freq;
                }
                local.segments_seen += freq;
            }
            Ok(local)
        })
        .try_reduce(|| CorpusStats::zero(n), |a, b| Ok(a.merged(b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneStrategy {
    LeafFreq,
    MergeBased,
    NaiveFreq,
    LastId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PruneOrder {
    /// First entry is pruned first.
    pub tokens: Vec<TokenId>,
    pub strategy: PruneStrategy,
    /// Atomic and special tokens; never listed in `tokens`.
    pub protected: BTreeSet<TokenId>,
}

impl PruneOrder {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn protected_set(model: &TokenizerModel, atomics: &BTreeSet<TokenId>) -> BTreeSet<TokenId> {
    atomics
        .iter()
        .chain(model.vocab().specials())
        .copied()
        .collect()
}

fn check_stats(model: &TokenizerModel, stats: &CorpusStats) -> Result<()> {
    if stats.tok_counts.len() != model.vocab_size() {
        return Err(Error::inconsistent(format!(
            "statistics cover {} tokens but the model has {}",
            stats.tok_counts.len(),
            model.vocab_size()
        )));
    }
    Ok(())
}

/// Leaf-first pruning driven by a min-queue keyed `(frequency, id)`.
///
/// When a token is popped its queued frequency is added to its operands,
/// since each of its occurrences splits back into them. Operands whose last
/// consuming merge disappears join the queue.
pub fn leaf_frequency_prune_order(
    model: &TokenizerModel,
    stats: &CorpusStats,
    unreachable: &BTreeSet<TokenId>,
) -> Result<PruneOrder> {
    check_stats(model, stats)?;
    let mut graph = MergeGraph::build(model, unreachable)?;
    let protected = protected_set(model, graph.atomics());

    let mut key: Vec<u64> = stats.tok_counts.clone();
    let mut queued = vec![false; key.len()];
    let mut done = vec![false; key.len()];
    let mut heap: BinaryHeap<Reverse<(u64, TokenId)>> = BinaryHeap::new();
    for &t in graph.leaves() {
        if !protected.contains(&t) {
            queued[t as usize] = true;
            heap.push(Reverse((key[t as usize], t)));
        }
    }

    let mut order = Vec::new();
    while let Some(Reverse((freq, t))) = heap.pop() {
        let ti = t as usize;
        if done[ti] || freq != key[ti] {
            continue;
        }
        done[ti] = true;
        order.push(t);
        if let Some((l, r)) = graph.token_split(t) {
            for op in [l, r] {
                let oi = op as usize;
                key[oi] += freq;
                if queued[oi] && !done[oi] {
                    heap.push(Reverse((key[oi], op)));
                }
            }
        }
        for leaf in graph.recount_after_removal(t)? {
            if !protected.contains(&leaf) && !queued[leaf as usize] {
                queued[leaf as usize] = true;
                heap.push(Reverse((key[leaf as usize], leaf)));
            }
        }
    }

    Ok(PruneOrder {
        tokens: order,
        strategy: PruneStrategy::LeafFreq,
        protected,
    })
}

/// Counts augmented by merge firings (each firing of `(t1, t2)` adds its
/// count to both operands), sorted ascending; ties go to the longer token,
/// then to the lower id.
pub fn merge_based_prune_order(model: &TokenizerModel, stats: &CorpusStats) -> Result<PruneOrder> {
    check_stats(model, stats)?;
    let counts = augmented_counts(model, stats);
    let protected = protected_set(model, &model.atomic_ids());
    let mut tokens: Vec<TokenId> = (0..model.vocab_size() as TokenId)
        .filter(|t| !protected.contains(t))
        .collect();
    let len = |t: TokenId| model.mode().token_length(model.vocab().token(t).unwrap_or_default());
    tokens.sort_by_key(|&t| (counts[t as usize], Reverse(len(t)), t));
    Ok(PruneOrder {
        tokens,
        strategy: PruneStrategy::MergeBased,
        protected,
    })
}

/// Token counts plus, for every merge, its firing count added to each
/// operand.
pub fn augmented_counts(model: &TokenizerModel, stats: &CorpusStats) -> Vec<u64> {
    let mut counts = stats.tok_counts.clone();
    counts.resize(model.vocab_size(), 0);
    for m in model.merges() {
        let n = stats.merge_count(m.left, m.right);
        counts[m.left as usize] += n;
        counts[m.right as usize] += n;
    }
    counts
}

/// Non-protected tokens by ascending raw frequency, ties by id.
pub fn naive_frequency_prune_order(model: &TokenizerModel, stats: &CorpusStats) -> Result<PruneOrder> {
    check_stats(model, stats)?;
    let protected = protected_set(model, &model.atomic_ids());
    let mut tokens: Vec<TokenId> = (0..model.vocab_size() as TokenId)
        .filter(|t| !protected.contains(t))
        .collect();
    tokens.sort_by_key(|&t| (stats.tok_count(t), t));
    Ok(PruneOrder {
        tokens,
        strategy: PruneStrategy::NaiveFreq,
        protected,
    })
}

/// Non-protected tokens, highest id first.
pub fn id_prune_order(model: &TokenizerModel) -> PruneOrder {
    let protected = protected_set(model, &model.atomic_ids());
    let tokens = (0..model.vocab_size() as TokenId)
        .rev()
        .filter(|t| !protected.contains(t))
        .collect();
    PruneOrder {
        tokens,
        strategy: PruneStrategy::LastId,
        protected,
    }
}

/// Removes the first `k` tokens of `order` and every merge that produces or
/// consumes one of them, then renumbers the remaining tokens densely in
/// their original relative order.
pub fn apply_prune(model: &TokenizerModel, order: &PruneOrder, k: usize) -> Result<TokenizerModel> {
    if k > order.tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot prune {k} tokens from an order of {}",
            order.tokens.len()
        )));
    }
    if k == 0 {
        return Ok(model.clone());
    }
    let n = model.vocab_size();
    let mut removed = vec![false; n];
    for &t in &order.tokens[..k] {
        let ti = t as usize;
        if ti >= n || order.protected.contains(&t) || model.vocab().is_special(t) {
            return Err(Error::InvalidArgument(format!("token {t} cannot be pruned")));
        }
        removed[ti] = true;
    }

    let mut remap = vec![None; n];
    let mut vocab = Vocab::new();
    for (id, bytes) in model.vocab().iter() {
        if !removed[id as usize] {
            let new_id = vocab.push(bytes)?;
            if model.vocab().is_special(id) {
                vocab.mark_special(new_id)?;
            }
            remap[id as usize] = Some(new_id);
        }
    }
    let old = model.to_parts();
    let merges = model
        .merges()
        .iter()
        .filter_map(|m| Some((remap[m.left as usize]?, remap[m.right as usize]?, remap[m.output as usize]?)))
        .map(|(l, r, _)| (l, r))
        .collect();
    TokenizerModel::new(ModelParts {
        vocab,
        merges,
        unk_token: old.unk_token.and_then(|u| remap[u as usize]),
        ..old
    })
}
