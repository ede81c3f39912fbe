//! The DAG a merge list induces over the vocabulary.
//!
//! Atomic tokens are those no merge produces (bytes, characters, specials).
//! A leaf is a produced token that no merge consumes; removing a leaf can
//! never break another token's merge path. Supplied unreachable tokens are
//! leaves regardless of their in-degree, since merges that consume them can
//! never fire.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{TokenId, TokenizerModel};

#[derive(Clone, Debug)]
pub struct MergeGraph {
    atomics: BTreeSet<TokenId>,
    leaves: BTreeSet<TokenId>,
    /// Merges each token takes part in as left or right operand.
    downstream: Vec<u32>,
    /// Operands of the lowest-rank merge producing each token.
    splits: Vec<Option<(TokenId, TokenId)>>,
    /// Every merge producing each token, lowest rank first.
    producers: Vec<Vec<(TokenId, TokenId)>>,
    removed: Vec<bool>,
}

/// One row of the graph dump.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct GraphNode {
    pub id: TokenId,
    pub token: String,
    pub split: Option<(String, String)>,
    pub downstream_count: u32,
    pub atomic: bool,
    pub leaf: bool,
}

impl MergeGraph {
    pub fn build(model: &TokenizerModel, unreachable: &BTreeSet<TokenId>) -> Result<Self> {
        let n = model.vocab_size();
        if let Some(&bad) = unreachable.iter().find(|&&t| t as usize >= n) {
            return Err(Error::inconsistent(format!(
                "unreachable token {bad} is outside the vocabulary"
            )));
        }
        let mut downstream = vec![0u32; n];
        let mut splits = vec![None; n];
        let mut producers = vec![Vec::new(); n];
        for m in model.merges() {
            let (l, r, out) = (m.left as usize, m.right as usize, m.output as usize);
            if l >= n || r >= n || out >= n {
                return Err(Error::inconsistent("merge references a token outside the vocabulary"));
            }
            downstream[l] += 1;
            if r != l {
                downstream[r] += 1;
            }
            if splits[out].is_none() {
                splits[out] = Some((m.left, m.right));
            }
            producers[out].push((m.left, m.right));
        }

        let atomics: BTreeSet<TokenId> = (0..n as TokenId)
            .filter(|&t| splits[t as usize].is_none() && !unreachable.contains(&t))
            .collect();
        let leaves: BTreeSet<TokenId> = (0..n as TokenId)
            .filter(|&t| {
                unreachable.contains(&t)
                    || (splits[t as usize].is_some() && downstream[t as usize] == 0)
            })
            .collect();

        Ok(Self {
            atomics,
            leaves,
            downstream,
            splits,
            producers,
            removed: vec![false; n],
        })
    }

    pub fn atomics(&self) -> &BTreeSet<TokenId> {
        &self.atomics
    }

    /// Current leaves, including ones exposed by earlier removals.
    pub fn leaves(&self) -> &BTreeSet<TokenId> {
        &self.leaves
    }

    pub fn is_atomic(&self, token: TokenId) -> bool {
        self.atomics.contains(&token)
    }

    pub fn downstream_merges(&self, token: TokenId) -> u32 {
        self.downstream.get(token as usize).copied().unwrap_or(0)
    }

    pub fn token_split(&self, token: TokenId) -> Option<(TokenId, TokenId)> {
        self.splits.get(token as usize).copied().flatten()
    }

    pub fn is_removed(&self, token: TokenId) -> bool {
        self.removed.get(token as usize).copied().unwrap_or(false)
    }

    /// Removes a leaf together with the merges producing it and returns the
    /// operands that became leaves as a result.
    ///
    /// Every producing merge is dropped, not only the one recorded in
    /// [`token_split`](Self::token_split), so duplicate producers release
    /// their operands as well.
    pub fn recount_after_removal(&mut self, token: TokenId) -> Result<Vec<TokenId>> {
        if !self.leaves.remove(&token) {
            return Err(Error::NotALeaf(token));
        }
        self.removed[token as usize] = true;
        let mut new_leaves = Vec::new();
        for (l, r) in std::mem::take(&mut self.producers[token as usize]) {
            let operands: &[TokenId] = if l == r { &[l] } else { &[l, r] };
            for &t in operands {
                let count = &mut self.downstream[t as usize];
                *count = count.saturating_sub(1);
                if *count == 0
                    && !self.atomics.contains(&t)
                    && !self.removed[t as usize]
                    && self.leaves.insert(t)
                {
                    new_leaves.push(t);
                }
            }
        }
        Ok(new_leaves)
    }

    pub fn dump(&self, model: &TokenizerModel) -> Vec<GraphNode> {
        (0..model.vocab_size() as TokenId)
            .map(|id| GraphNode {
                id,
                token: model.display_token(id),
                split: self
                    .token_split(id)
                    .map(|(l, r)| (model.display_token(l), model.display_token(r))),
                downstream_count: self.downstream_merges(id),
                atomic: self.is_atomic(id),
                leaf: self.leaves.contains(&id),
            })
            .collect()
    }
}

/// Builds the graph of `model` with the given unreachable tokens.
pub fn build_graph(model: &TokenizerModel, unreachable: &BTreeSet<TokenId>) -> Result<MergeGraph> {
    MergeGraph::build(model, unreachable)
}
