//! Corpus-scale segment counting.
//!
//! Training, extension, pruning statistics and most metrics only depend on
//! how often each distinct pre-tokenized segment occurs, so documents are
//! reduced to a segment multiset once and every later pass tokenizes each
//! distinct segment a single time.

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::model::TokenizerModel;

/// Documents are counted in chunks of this many per worker task.
const CHUNK: usize = 256;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentCounts {
    counts: FxHashMap<Box<[u8]>, u64>,
    total: u64,
}

impl SegmentCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts already normalized and pre-tokenized segments.
    pub fn from_segments<I, S>(segments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut out = Self::new();
        for s in segments {
            out.add(s.as_ref(), 1);
        }
        out
    }

    /// Normalizes and pre-tokenizes documents with `model`'s configuration.
    pub fn from_documents<S: AsRef<str> + Sync>(model: &TokenizerModel, docs: &[S]) -> Self {
        let mut out = Self::new();
        out.add_documents(model, docs);
        out
    }

    /// Adds a batch of documents; counting runs as a parallel map-reduce.
    pub fn add_documents<S: AsRef<str> + Sync>(&mut self, model: &TokenizerModel, docs: &[S]) {
        let partial = docs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut local = SegmentCounts::new();
                for doc in chunk {
                    let normalized = model.normalize(doc.as_ref());
                    model.for_each_segment(&normalized, |seg| local.add(seg.as_bytes(), 1));
                }
                local
            })
            .reduce(SegmentCounts::new, SegmentCounts::merged);
        self.merge(partial);
    }

    pub fn add(&mut self, segment: &[u8], count: u64) {
        if count == 0 {
            return;
        }
        self.total += count;
        if let Some(c) = self.counts.get_mut(segment) {
            *c += count;
        } else {
            self.counts.insert(segment.into(), count);
        }
    }

    pub fn merge(&mut self, other: SegmentCounts) {
        if other.counts.len() > self.counts.len() {
            let mine = std::mem::replace(self, other);
            self.merge(mine);
            return;
        }
        for (seg, c) in other.counts {
            *self.counts.entry(seg).or_insert(0) += c;
        }
        self.total += other.total;
    }

    fn merged(mut self, other: SegmentCounts) -> SegmentCounts {
        self.merge(other);
        self
    }

    pub fn get(&self, segment: &[u8]) -> u64 {
        self.counts.get(segment).copied().unwrap_or(0)
    }

    /// Number of distinct segments.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Number of segments counted with multiplicity.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], u64)> + '_ {
        self.counts.iter().map(|(s, &c)| (&**s, c))
    }

    /// Distinct segments in byte order, for deterministic processing.
    pub fn sorted(&self) -> Vec<(&[u8], u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub(crate) fn par_sorted(&self) -> Vec<(&[u8], u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.par_sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }
}
