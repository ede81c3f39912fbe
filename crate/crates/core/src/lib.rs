//! Controlled modification of pre-trained BPE tokenizers.
//!
//! * [`model`]: the tokenizer itself (normalization, pre-tokenization,
//!   exact merge-loop tokenization with optional merge skipping, decoding).
//! * [`graph`]: the DAG induced by the merge list.
//! * [`trainer`]: BPE training and the pair-counting machinery.
//! * [`extension`]: continued BPE training and naive extension baselines.
//! * [`pruning`]: leaf-frequency, merge-based, naive-frequency and last-id
//!   prune orders, and applying them.
//! * [`analysis`]: self-tokenization test, compression, Rényi efficiency,
//!   unused-token rate and frequency histograms.
//! * [`fvt`]: embedding transfer across vocabulary changes.
//! * [`io`]: corpus streaming and tokenizer/embedding files.

pub mod analysis;
pub mod byte_units;
mod error;
pub mod extension;
pub mod fvt;
pub mod graph;
pub mod io;
pub mod model;
pub mod parallel;
pub mod pruning;
pub mod segments;
pub mod trainer;

pub use analysis::{stt, SttReport};
pub use error::{Error, Result};
pub use extension::{continued_extend, naive_extend, ExtensionReport, NaiveStrategy};
pub use fvt::{fvt_transfer, EmbeddingMatrix};
pub use graph::{build_graph, MergeGraph};
pub use io::{load_tokenizer, save_tokenizer};
pub use pruning::{apply_prune, collect_stats, CorpusStats, PruneOrder, PruneStrategy};
pub use segments::SegmentCounts;
pub use trainer::{train_bpe, PairCounts, TrainerConfig};
pub use model::{
    MergeRule, Mode, ModelParts, NormalizerConfig, PreTokenizerConfig, PreTokenizerKind, TokenId,
    TokenizerModel, Vocab, WORD_MARKER,
};
