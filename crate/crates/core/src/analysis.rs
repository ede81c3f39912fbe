//! Intrinsic tokenizer metrics.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{TokenId, TokenizerModel};
use crate::segments::SegmentCounts;

pub const DEFAULT_RENYI_ALPHA: f64 = 2.5;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SttReport {
    pub unreachable: BTreeSet<TokenId>,
    pub count: usize,
    /// Special and byte-fallback tokens, which are not tested.
    pub skipped_special: usize,
}

/// Self-tokenization test: tokenizes the raw content of every token with
/// merge skipping off and no pre-processing, and flags the tokens that do
/// not come back as themselves.
pub fn stt(model: &TokenizerModel) -> SttReport {
    let n = model.vocab_size() as TokenId;
    let (unreachable, skipped) = (0..n)
        .into_par_iter()
        .fold(
            || (Vec::new(), 0usize),
            |(mut bad, mut skipped), id| {
                if model.vocab().is_special(id) || model.is_byte_fallback_token(id) {
                    skipped += 1;
                } else {
                    let bytes = model.vocab().token(id).expect("id in range");
                    match model.tokenize_segment(bytes, false) {
                        Ok(ids) if ids == [id] => {}
                        _ => bad.push(id),
                    }
                }
                (bad, skipped)
            },
        )
        .reduce(
            || (Vec::new(), 0),
            |(mut a, x), (b, y)| {
                a.extend(b);
                (a, x + y)
            },
        );
    let unreachable: BTreeSet<TokenId> = unreachable.into_iter().collect();
    SttReport {
        count: unreachable.len(),
        unreachable,
        skipped_special: skipped,
    }
}

/// Bytes per token over raw (pre-normalization) UTF-8 text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Compression {
    pub byte_count: u64,
    pub token_count: u64,
    pub bytes_per_token: f64,
}

impl Compression {
    fn from_counts(byte_count: u64, token_count: u64) -> Self {
        let bytes_per_token = if token_count == 0 {
            0.0
        } else {
            byte_count as f64 / token_count as f64
        };
        Self {
            byte_count,
            token_count,
            bytes_per_token,
        }
    }
}

/// Per-token emission counts over `docs`, indexed by token id.
///
/// Each distinct segment is tokenized once.
pub fn token_frequencies<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    docs: &[S],
    merge_skipping: bool,
) -> Result<Vec<u64>> {
    let segments = SegmentCounts::from_documents(model, docs);
    segment_token_frequencies(model, &segments, merge_skipping)
}

pub fn segment_token_frequencies(
    model: &TokenizerModel,
    segments: &SegmentCounts,
    merge_skipping: bool,
) -> Result<Vec<u64>> {
    let n = model.vocab_size();
    let items: Vec<(&[u8], u64)> = segments.iter().collect();
    items
        .par_chunks(512)
        .map(|chunk| {
            let mut counts = vec![0u64; n];
            let mut ids = Vec::new();
            for &(seg, freq) in chunk {
                ids.clear();
                model.tokenize_segment_into(seg, merge_skipping, &mut ids)?;
                for &id in &ids {
                    counts[id as usize] += freq;
                }
            }
            Ok(counts)
        })
        .try_reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )
}

pub fn compression<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    docs: &[S],
    merge_skipping: bool,
) -> Result<Compression> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let byte_count: u64 = docs.par_iter().map(|d| d.as_ref().len() as u64).sum();
    let token_count = token_frequencies(model, docs, merge_skipping)?.iter().sum();
    Ok(Compression::from_counts(byte_count, token_count))
}

/// Denominator of the Rényi efficiency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenyiNormalization {
    /// `log |V|` over the whole vocabulary.
    #[default]
    FullVocab,
    /// `log` of the number of distinct tokens observed.
    ObservedTypes,
}

/// Order-`alpha` Rényi entropy of the unigram distribution given by
/// `counts`, divided by the log of the vocabulary size (or of the number of
/// observed types).
pub fn renyi_efficiency_from_counts(
    counts: &[u64],
    alpha: f64,
    normalization: RenyiNormalization,
) -> Result<f64> {
    if !alpha.is_finite() || alpha < 0.0 || (alpha - 1.0).abs() < f64::EPSILON {
        return Err(Error::InvalidArgument(format!(
            "alpha must be a non-negative number other than 1, got {alpha}"
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let observed = counts.iter().filter(|&&c| c > 0).count();
    if observed < 2 {
        return Err(Error::DegenerateDistribution);
    }
    let total = total as f64;
    let sum: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64 / total).powf(alpha))
        .sum();
    let entropy = sum.ln() / (1.0 - alpha);
    let types = match normalization {
        RenyiNormalization::FullVocab => counts.len(),
        RenyiNormalization::ObservedTypes => observed,
    };
    Ok(entropy / (types as f64).ln())
}

pub fn renyi_efficiency<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    docs: &[S],
    alpha: f64,
    normalization: RenyiNormalization,
) -> Result<f64> {
    let counts = token_frequencies(model, docs, true)?;
    renyi_efficiency_from_counts(&counts, alpha, normalization)
}

/// Fraction of `added` never emitted when tokenizing `docs`.
pub fn unused_added<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    added: &BTreeSet<TokenId>,
    docs: &[S],
    merge_skipping: bool,
) -> Result<f64> {
    if added.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(&bad) = added.iter().find(|&&t| t as usize >= model.vocab_size()) {
        return Err(Error::UnknownId(bad));
    }
    let counts = token_frequencies(model, docs, merge_skipping)?;
    let unused = added.iter().filter(|&&t| counts[t as usize] == 0).count();
    Ok(unused as f64 / added.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HistogramRow {
    pub id: TokenId,
    pub token: String,
    pub count: u64,
}

/// Emitted tokens with their counts, most frequent first (ties by id),
/// optionally restricted to `subset`.
pub fn frequency_histogram<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    docs: &[S],
    subset: Option<&BTreeSet<TokenId>>,
) -> Result<Vec<HistogramRow>> {
    let counts = token_frequencies(model, docs, true)?;
    let mut rows: Vec<HistogramRow> = counts
        .iter()
        .enumerate()
        .filter(|&(id, &c)| c > 0 && subset.map_or(true, |s| s.contains(&(id as TokenId))))
        .map(|(id, &count)| HistogramRow {
            id: id as TokenId,
            token: model.display_token(id as TokenId),
            count,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.id.cmp(&b.id)));
    Ok(rows)
}

/// Writes histogram rows as CSV with columns `id,token,count`.
pub fn write_histogram_csv<W: Write>(rows: &[HistogramRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One evaluation of a tokenizer over a corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricRow {
    pub byte_count: u64,
    pub token_count: u64,
    pub bytes_per_token: f64,
    pub renyi_efficiency: Option<f64>,
    pub unused_added_fraction: Option<f64>,
    pub stt_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub merge_skipping: bool,
    pub renyi: Option<(f64, RenyiNormalization)>,
    pub added: Option<BTreeSet<TokenId>>,
    pub stt: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            merge_skipping: true,
            renyi: Some((DEFAULT_RENYI_ALPHA, RenyiNormalization::FullVocab)),
            added: None,
            stt: false,
        }
    }
}

/// Computes the requested metrics with a single tokenization pass.
pub fn evaluate<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    docs: &[S],
    opts: &EvalOptions,
) -> Result<MetricRow> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counts = token_frequencies(model, docs, opts.merge_skipping)?;
    let byte_count: u64 = docs.par_iter().map(|d| d.as_ref().len() as u64).sum();
    let c = Compression::from_counts(byte_count, counts.iter().sum());
    let renyi_efficiency = opts
        .renyi
        .map(|(alpha, norm)| renyi_efficiency_from_counts(&counts, alpha, norm))
        .transpose()?;
    let unused_added_fraction = match &opts.added {
        None => None,
        Some(added) if added.is_empty() => return Err(Error::EmptySet),
        Some(added) => {
            let mut unused = 0usize;
            for &t in added {
                match counts.get(t as usize) {
                    None => return Err(Error::UnknownId(t)),
                    Some(0) => unused += 1,
                    Some(_) => {}
                }
            }
            Some(unused as f64 / added.len() as f64)
        }
    };
    Ok(MetricRow {
        byte_count: c.byte_count,
        token_count: c.token_count,
        bytes_per_token: c.bytes_per_token,
        renyi_efficiency,
        unused_added_fraction,
        stt_count: opts.stt.then(|| stt(model).count),
    })
}
