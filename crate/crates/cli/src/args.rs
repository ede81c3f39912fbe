use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "tokforge", version, about = "Extend, prune and analyse BPE tokenizers")]
pub struct Cli {
    /// Print machine-readable JSON reports instead of plain text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a BPE tokenizer from scratch.
    Train(TrainArgs),
    /// Add tokens to an existing tokenizer.
    Extend(ExtendArgs),
    /// Remove tokens from an existing tokenizer.
    Prune(PruneArgs),
    /// Prune, then extend, sharing the corpus pass.
    Pipeline(PipelineArgs),
    /// Self-tokenization test: list tokens no input reaches through merges.
    Stt(SttArgs),
    /// Intrinsic metrics over a corpus.
    Eval(EvalArgs),
    /// Transfer an embedding matrix to a new vocabulary.
    Fvt(FvtArgs),
    /// Dump a tokenizer summary, its vocabulary, merges or merge graph.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    /// Corpus file (plain text or gzip), `-` for standard input.
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,

    #[arg(long, value_enum, default_value_t = CorpusFormatArg::Plain)]
    pub format: CorpusFormatArg,

    /// Stop reading after the document that reaches this many characters.
    #[arg(long, value_name = "N")]
    pub budget_chars: Option<u64>,

    /// Shuffle documents with this seed before applying the budget.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormatArg {
    /// One document per line.
    Plain,
    /// JSON lines with a "text" field.
    Jsonl,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    ByteLevel,
    Sentencepiece,
}

#[derive(Args, Debug, Clone)]
pub struct LearnArgs {
    /// Pairs seen fewer times than this are never merged.
    #[arg(long, default_value_t = 2)]
    pub min_pair_frequency: u64,

    /// Longest token a merge may create (bytes, or chars for SentencePiece-style).
    #[arg(long)]
    pub max_token_length: Option<usize>,

    /// SentencePiece-style: do not add corpus characters missing from the vocabulary.
    #[arg(long)]
    pub no_character_coverage: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,

    #[arg(long, value_enum, default_value_t = ModeArg::ByteLevel)]
    pub mode: ModeArg,

    /// Final vocabulary size, including the alphabet and special tokens.
    #[arg(long)]
    pub vocab_size: usize,

    /// Special token placed at the start of the vocabulary (repeatable).
    #[arg(long = "special", value_name = "TOKEN")]
    pub specials: Vec<String>,

    #[command(flatten)]
    pub learn: LearnArgs,

    #[arg(long)]
    pub out: PathBuf,

    /// Write the JSON report here as well.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtendMethod {
    Continued,
    Naive,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyArg {
    Regen,
    Append,
}

#[derive(Args, Debug, Clone)]
pub struct ExtendOptions {
    #[arg(long, value_enum, default_value_t = ExtendMethod::Continued)]
    pub method: ExtendMethod,

    /// How naive extension supplies merges for the copied tokens.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,

    /// Number of tokens to add.
    #[arg(long, value_name = "K")]
    pub n_new: usize,

    #[command(flatten)]
    pub learn: LearnArgs,
}

#[derive(Args, Debug)]
pub struct ExtendArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub corpus: CorpusArgs,

    #[command(flatten)]
    pub extend: ExtendOptions,

    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneMethod {
    LeafFreq,
    MergeBased,
    NaiveFreq,
    LastId,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, value_enum)]
    pub method: PruneMethod,

    /// Number of tokens to remove.
    #[arg(long)]
    pub k: usize,

    /// Required by every method except last-id.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = CorpusFormatArg::Plain)]
    pub format: CorpusFormatArg,

    #[arg(long, value_name = "N")]
    pub budget_chars: Option<u64>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Write the full prune order as JSON.
    #[arg(long)]
    pub order_out: Option<PathBuf>,

    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub corpus: CorpusArgs,

    /// Corpus for the extension step; defaults to --corpus.
    #[arg(long, value_name = "PATH")]
    pub extend_corpus: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = PruneMethod::LeafFreq)]
    pub prune_method: PruneMethod,

    #[arg(long, value_name = "K")]
    pub prune_k: usize,

    #[arg(long, value_enum, default_value_t = ExtendMethod::Continued)]
    pub extend_method: ExtendMethod,

    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,

    #[arg(long, value_name = "N")]
    pub extend_n: usize,

    #[command(flatten)]
    pub learn: LearnArgs,

    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SttArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Compression,
    Renyi,
    Unused,
    Stt,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenyiNormArg {
    FullVocab,
    ObservedTypes,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    #[command(flatten)]
    pub corpus: CorpusArgs,

    #[arg(long, value_enum, value_delimiter = ',', default_value = "compression,renyi")]
    pub metrics: Vec<Metric>,

    /// Added tokens for the unused-token rate: an extension report, or a
    /// JSON array of token strings or ids.
    #[arg(long, value_name = "PATH")]
    pub added: Option<PathBuf>,

    #[arg(long, default_value_t = tokforge::analysis::DEFAULT_RENYI_ALPHA)]
    pub renyi_alpha: f64,

    #[arg(long, value_enum, default_value_t = RenyiNormArg::FullVocab)]
    pub renyi_norm: RenyiNormArg,

    /// Tokenize without merge skipping.
    #[arg(long)]
    pub no_merge_skipping: bool,

    /// Write the metric row as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    /// Write per-token counts as CSV (id,token,count).
    #[arg(long, value_name = "PATH")]
    pub histogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FvtArgs {
    #[arg(long)]
    pub old_tok: PathBuf,

    #[arg(long)]
    pub new_tok: PathBuf,

    #[arg(long)]
    pub old_emb: PathBuf,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    /// Dump every token with its id.
    #[arg(long, conflicts_with_all = ["merges", "graph"])]
    pub vocab: bool,

    /// Dump the merge list in rank order.
    #[arg(long, conflicts_with = "graph")]
    pub merges: bool,

    /// Dump the merge graph (unreachable tokens count as leaves).
    #[arg(long)]
    pub graph: bool,
}
