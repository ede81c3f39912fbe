use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{json, Value};
use tokforge::analysis::{evaluate, frequency_histogram, write_histogram_csv, EvalOptions, RenyiNormalization};
use tokforge::io::{stream_documents, read_documents, CorpusFormat, CorpusSource};
use tokforge::pruning::{
    id_prune_order, leaf_frequency_prune_order, merge_based_prune_order, naive_frequency_prune_order,
};
use tokforge::trainer::segmenter;
use tokforge::{
    apply_prune, build_graph, collect_stats, continued_extend, fvt_transfer, load_tokenizer, naive_extend,
    save_tokenizer, stt, EmbeddingMatrix, Error, ExtensionReport, Mode, NaiveStrategy, PruneOrder,
    SegmentCounts, TokenId, TokenizerModel, TrainerConfig,
};

use crate::args::*;
use crate::report::{emit, write_json};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const BATCH_DOCS: usize = 50_000;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a, cli.json),
        Command::Extend(a) => extend(a, cli.json),
        Command::Prune(a) => prune(a, cli.json),
        Command::Pipeline(a) => pipeline(a, cli.json),
        Command::Stt(a) => stt_cmd(a, cli.json),
        Command::Eval(a) => eval(a, cli.json),
        Command::Fvt(a) => fvt(a, cli.json),
        Command::Inspect(a) => inspect(a, cli.json),
    }
}

fn source(path: &Path, format: CorpusFormatArg, budget: Option<u64>, seed: Option<u64>) -> CorpusSource {
    CorpusSource {
        path: (path != Path::new("-")).then(|| path.to_path_buf()),
        format: match format {
            CorpusFormatArg::Plain => CorpusFormat::PlainLines,
            CorpusFormatArg::Jsonl => CorpusFormat::JsonLinesTextField,
        },
        budget_chars: budget,
        seed,
    }
}

impl CorpusArgs {
    fn source(&self) -> CorpusSource {
        source(&self.corpus, self.format, self.budget_chars, self.seed)
    }
}

struct Corpus {
    segments: SegmentCounts,
    documents: u64,
    chars: u64,
}

impl Corpus {
    fn summary(&self, src: &CorpusSource) -> Value {
        json!({
            "path": display_path(src.path.as_deref()),
            "documents": self.documents,
            "chars": self.chars,
            "budget_chars": src.budget_chars,
            "seed": src.seed,
        })
    }
}

fn display_path(p: Option<&Path>) -> String {
    p.map_or_else(|| "<stdin>".into(), |p| p.display().to_string())
}

/// Streams the corpus, counting the segments `model` splits it into.
fn read_segments(model: &TokenizerModel, src: &CorpusSource) -> Result<Corpus> {
    let mut corpus = Corpus {
        segments: SegmentCounts::new(),
        documents: 0,
        chars: 0,
    };
    let mut batch = Vec::with_capacity(BATCH_DOCS);
    for doc in stream_documents(src)? {
        let doc = doc?;
        corpus.documents += 1;
        corpus.chars += doc.chars().count() as u64;
        batch.push(doc);
        if batch.len() == BATCH_DOCS {
            corpus.segments.add_documents(model, &batch);
            batch.clear();
        }
    }
    corpus.segments.add_documents(model, &batch);
    if corpus.segments.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    Ok(corpus)
}

fn load(path: &Path) -> Result<TokenizerModel> {
    Ok(load_tokenizer(path)?)
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::ByteLevel => "byte_level",
        Mode::SentencePiece => "sentencepiece",
    }
}

fn trainer_config(mode: Mode, target: usize, learn: &LearnArgs) -> TrainerConfig {
    let mut cfg = TrainerConfig::new(mode, target).with_min_pair_frequency(learn.min_pair_frequency);
    if learn.max_token_length.is_some() {
        cfg.max_token_length = learn.max_token_length;
    }
    cfg.character_coverage = !learn.no_character_coverage;
    cfg
}

fn tokens(model: &TokenizerModel, ids: impl IntoIterator<Item = TokenId>) -> Vec<String> {
    ids.into_iter().map(|t| model.display_token(t)).collect()
}

fn train(a: &TrainArgs, json: bool) -> Result<()> {
    let mode = match a.mode {
        ModeArg::ByteLevel => Mode::ByteLevel,
        ModeArg::Sentencepiece => Mode::SentencePiece,
    };
    let mut cfg = trainer_config(mode, a.vocab_size, &a.learn);
    if !a.specials.is_empty() {
        cfg.special_tokens = a.specials.clone();
    }
    let src = a.corpus.source();
    let corpus = read_segments(&segmenter(mode), &src)?;
    let model = tokforge::train_bpe(&corpus.segments, &cfg)?;
    save_tokenizer(&model, &a.out)?;
    let report = json!({
        "command": "train",
        "output": a.out.display().to_string(),
        "mode": mode_name(mode),
        "requested_vocab_size": a.vocab_size,
        "vocab_size": model.vocab_size(),
        "merges": model.merges().len(),
        "corpus": corpus.summary(&src),
        "seed": src.seed,
    });
    emit(&report, json, a.report.as_deref())
}

fn naive_strategy(method: ExtendMethod, strategy: Option<StrategyArg>) -> Result<Option<NaiveStrategy>> {
    match (method, strategy) {
        (ExtendMethod::Continued, Some(_)) => Err(CliError::Usage(
            "--strategy only applies to --method naive".into(),
        )),
        (ExtendMethod::Continued, None) => Ok(None),
        (ExtendMethod::Naive, s) => Ok(Some(match s.unwrap_or(StrategyArg::Regen) {
            StrategyArg::Regen => NaiveStrategy::Regen,
            StrategyArg::Append => NaiveStrategy::AppendMergeList,
        })),
    }
}

/// Either a finished extension or an exhausted one carrying its partial
/// result.
struct Extended {
    model: TokenizerModel,
    report: ExtensionReport,
    exhausted: bool,
}

fn run_extension(
    model: &TokenizerModel,
    segments: &SegmentCounts,
    n_new: usize,
    naive: Option<NaiveStrategy>,
    learn: &LearnArgs,
) -> Result<Extended> {
    let cfg = trainer_config(model.mode(), 0, learn);
    let res = match naive {
        None => continued_extend(model, segments, n_new, &cfg),
        Some(s) => naive_extend(model, segments, n_new, s, &cfg),
    };
    match res {
        Ok((model, report)) => Ok(Extended {
            model,
            report,
            exhausted: false,
        }),
        Err(Error::Exhausted { partial, .. }) => {
            let (model, report) = *partial;
            Ok(Extended {
                model,
                report,
                exhausted: true,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn extension_summary(ext: &Extended, n_new: usize, naive: Option<NaiveStrategy>) -> Value {
    json!({
        "method": if naive.is_some() { "naive" } else { "continued" },
        "strategy": naive.map(|s| match s {
            NaiveStrategy::Regen => "regen",
            NaiveStrategy::AppendMergeList => "append",
        }),
        "n_new": n_new,
        "added_tokens": ext.report.added_tokens,
        "added": tokens(&ext.model, ext.report.added_tokens.iter().copied()),
        "added_merges": ext.report.added_merges,
        "skipped_invalid": ext.report.skipped_invalid,
        "chars_added_for_coverage": ext.report.chars_added_for_coverage,
        "exhausted": ext.exhausted,
        "vocab_size": ext.model.vocab_size(),
    })
}

/// The partial model has already been written when this is returned.
fn exhausted_error(ext: Extended, n_new: usize) -> CliError {
    CliError::Data(Error::Exhausted {
        requested: n_new,
        partial: Box::new((ext.model, ext.report)),
    })
}

fn extend(a: &ExtendArgs, json: bool) -> Result<()> {
    let naive = naive_strategy(a.extend.method, a.extend.strategy)?;
    let model = load(&a.input)?;
    let src = a.corpus.source();
    let corpus = read_segments(&model, &src)?;
    let ext = run_extension(&model, &corpus.segments, a.extend.n_new, naive, &a.extend.learn)?;
    save_tokenizer(&ext.model, &a.out)?;
    let mut report = json!({
        "command": "extend",
        "input": a.input.display().to_string(),
        "output": a.out.display().to_string(),
        "corpus": corpus.summary(&src),
        "seed": src.seed,
    });
    merge_into(&mut report, extension_summary(&ext, a.extend.n_new, naive));
    emit(&report, json, a.report.as_deref())?;
    if ext.exhausted {
        return Err(exhausted_error(ext, a.extend.n_new));
    }
    Ok(())
}

fn merge_into(target: &mut Value, extra: Value) {
    if let (Value::Object(t), Value::Object(e)) = (target, extra) {
        t.extend(e);
    }
}

fn prune_order(model: &TokenizerModel, method: PruneMethod, segments: Option<&SegmentCounts>) -> Result<PruneOrder> {
    let stats = || -> Result<_> {
        let segs = segments.ok_or_else(|| CliError::Usage("this prune method needs --corpus".into()))?;
        Ok(collect_stats(model, segs)?)
    };
    Ok(match method {
        PruneMethod::LeafFreq => leaf_frequency_prune_order(model, &stats()?, &stt(model).unreachable)?,
        PruneMethod::MergeBased => merge_based_prune_order(model, &stats()?)?,
        PruneMethod::NaiveFreq => naive_frequency_prune_order(model, &stats()?)?,
        PruneMethod::LastId => id_prune_order(model),
    })
}

fn method_name(method: PruneMethod) -> &'static str {
    match method {
        PruneMethod::LeafFreq => "leaf-freq",
        PruneMethod::MergeBased => "merge-based",
        PruneMethod::NaiveFreq => "naive-freq",
        PruneMethod::LastId => "last-id",
    }
}

fn run_prune(
    model: &TokenizerModel,
    method: PruneMethod,
    k: usize,
    segments: Option<&SegmentCounts>,
) -> Result<(TokenizerModel, PruneOrder, Value)> {
    let order = prune_order(model, method, segments)?;
    if k > order.len() {
        return Err(CliError::Usage(format!(
            "--k {k} exceeds the {} prunable tokens",
            order.len()
        )));
    }
    let pruned = apply_prune(model, &order, k)?;
    let summary = json!({
        "method": method_name(method),
        "k": k,
        "removed": tokens(model, order.tokens[..k].iter().copied()),
        "vocab_size_before": model.vocab_size(),
        "vocab_size_after": pruned.vocab_size(),
        "merges_before": model.merges().len(),
        "merges_after": pruned.merges().len(),
        "unreachable_before": stt(model).count,
        "unreachable_after": stt(&pruned).count,
    });
    Ok((pruned, order, summary))
}

fn order_json(model: &TokenizerModel, order: &PruneOrder) -> Value {
    json!({
        "strategy": order.strategy,
        "tokens": order.tokens.iter().map(|&t| json!({"id": t, "token": model.display_token(t)})).collect::<Vec<_>>(),
        "protected": order.protected.len(),
    })
}

fn prune(a: &PruneArgs, json: bool) -> Result<()> {
    if a.method != PruneMethod::LastId && a.corpus.is_none() {
        return Err(CliError::Usage(format!("--method {} needs --corpus", method_name(a.method))));
    }
    let model = load(&a.input)?;
    let src = a.corpus.as_ref().map(|p| source(p, a.format, a.budget_chars, a.seed));
    let corpus = match &src {
        Some(s) => Some(read_segments(&model, s)?),
        None => None,
    };
    let (pruned, order, summary) = run_prune(&model, a.method, a.k, corpus.as_ref().map(|c| &c.segments))?;
    if let Some(p) = &a.order_out {
        write_json(p, &order_json(&model, &order))?;
    }
    save_tokenizer(&pruned, &a.out)?;
    let mut report = json!({
        "command": "prune",
        "input": a.input.display().to_string(),
        "output": a.out.display().to_string(),
        "corpus": corpus.as_ref().zip(src.as_ref()).map(|(c, s)| c.summary(s)),
        "seed": a.seed,
    });
    merge_into(&mut report, summary);
    emit(&report, json, a.report.as_deref())
}

fn pipeline(a: &PipelineArgs, json: bool) -> Result<()> {
    let naive = naive_strategy(a.extend_method, a.strategy)?;
    let model = load(&a.input)?;
    let src = a.corpus.source();
    let corpus = read_segments(&model, &src)?;
    let (pruned, _, prune_summary) = run_prune(&model, a.prune_method, a.prune_k, Some(&corpus.segments))?;

    // pruning keeps the normalizer and pre-tokenizer, so the segments
    // counted for the input model are the ones the pruned model would count
    let extend_src = a.extend_corpus.as_ref().map(|p| {
        let mut s = src.clone();
        s.path = (p != Path::new("-")).then(|| p.clone());
        s
    });
    let extend_corpus = match &extend_src {
        Some(s) => Some(read_segments(&pruned, s)?),
        None => None,
    };
    let segs = extend_corpus.as_ref().map_or(&corpus.segments, |c| &c.segments);
    let ext = run_extension(&pruned, segs, a.extend_n, naive, &a.learn)?;
    save_tokenizer(&ext.model, &a.out)?;

    let report = json!({
        "command": "pipeline",
        "input": a.input.display().to_string(),
        "output": a.out.display().to_string(),
        "corpus": corpus.summary(&src),
        "extend_corpus": extend_corpus.as_ref().zip(extend_src.as_ref()).map(|(c, s)| c.summary(s)),
        "seed": src.seed,
        "prune": prune_summary,
        "extend": extension_summary(&ext, a.extend_n, naive),
    });
    emit(&report, json, a.report.as_deref())?;
    if ext.exhausted {
        return Err(exhausted_error(ext, a.extend_n));
    }
    Ok(())
}

fn stt_cmd(a: &SttArgs, json: bool) -> Result<()> {
    let model = load(&a.input)?;
    let r = stt(&model);
    let report = json!({
        "command": "stt",
        "input": a.input.display().to_string(),
        "vocab_size": model.vocab_size(),
        "count": r.count,
        "skipped_special": r.skipped_special,
        "unreachable_ids": r.unreachable,
        "unreachable": tokens(&model, r.unreachable.iter().copied()),
    });
    emit(&report, json, a.report.as_deref())
}

fn read_added(model: &TokenizerModel, path: &Path) -> Result<BTreeSet<TokenId>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        context: path.display().to_string(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text).map_err(Error::from)?;
    let items = match &value {
        Value::Object(o) => o.get("added_tokens").and_then(Value::as_array),
        Value::Array(a) => Some(a),
        _ => None,
    }
    .ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{}: expected an array of tokens or an object with \"added_tokens\"",
            path.display()
        ))
    })?;
    items
        .iter()
        .map(|item| {
            let id = match item {
                Value::Number(n) => n.as_u64().and_then(|n| TokenId::try_from(n).ok()),
                Value::String(s) => model.parse_display(s).and_then(|b| model.token_id(&b)),
                _ => None,
            };
            match id {
                Some(id) if (id as usize) < model.vocab_size() => Ok(id),
                _ => Err(Error::InvalidArgument(format!("added token {item} is not in the vocabulary")).into()),
            }
        })
        .collect()
}

fn eval(a: &EvalArgs, json: bool) -> Result<()> {
    let wants = |m: Metric| a.metrics.contains(&m);
    if wants(Metric::Unused) && a.added.is_none() {
        return Err(CliError::Usage("the unused metric needs --added".into()));
    }
    let model = load(&a.input)?;
    let src = a.corpus.source();
    let docs = read_documents(&src)?;
    let norm = match a.renyi_norm {
        RenyiNormArg::FullVocab => RenyiNormalization::FullVocab,
        RenyiNormArg::ObservedTypes => RenyiNormalization::ObservedTypes,
    };
    let opts = EvalOptions {
        merge_skipping: !a.no_merge_skipping,
        renyi: wants(Metric::Renyi).then_some((a.renyi_alpha, norm)),
        added: match (&a.added, wants(Metric::Unused)) {
            (Some(p), true) => Some(read_added(&model, p)?),
            _ => None,
        },
        stt: wants(Metric::Stt),
    };
    let row = evaluate(&model, &docs, &opts)?;
    if let Some(p) = &a.csv {
        tokforge::io::write_atomic(p, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.serialize(&row)?;
            c.flush()?;
            Ok(())
        })?;
    }
    if let Some(p) = &a.histogram {
        let rows = frequency_histogram(&model, &docs, None)?;
        tokforge::io::write_atomic(p, |w| write_histogram_csv(&rows, w))?;
    }
    let report = json!({
        "command": "eval",
        "input": a.input.display().to_string(),
        "corpus": {
            "path": display_path(src.path.as_deref()),
            "documents": docs.len(),
            "budget_chars": src.budget_chars,
            "seed": src.seed,
        },
        "seed": src.seed,
        "merge_skipping": opts.merge_skipping,
        "renyi_alpha": opts.renyi.map(|r| r.0),
        "metrics": row,
    });
    emit(&report, json, None)
}

fn fvt(a: &FvtArgs, json: bool) -> Result<()> {
    let old = load(&a.old_tok)?;
    let new = load(&a.new_tok)?;
    let emb = EmbeddingMatrix::load(&a.old_emb)?;
    let out = fvt_transfer(&old, &new, &emb)?;
    out.save(&a.out)?;
    let copied = (0..new.vocab_size() as TokenId)
        .filter(|&t| new.token_bytes(t).is_ok_and(|b| old.token_id(b).is_some()))
        .count();
    let report = json!({
        "command": "fvt",
        "output": a.out.display().to_string(),
        "rows": out.rows(),
        "cols": out.cols(),
        "copied_rows": copied,
        "averaged_rows": out.rows() - copied,
    });
    emit(&report, json, None)
}

fn inspect(a: &InspectArgs, json: bool) -> Result<()> {
    let model = load(&a.input)?;
    let dump = if a.vocab {
        Value::Array(
            (0..model.vocab_size() as TokenId)
                .map(|t| json!({"id": t, "token": model.display_token(t), "special": model.vocab().is_special(t)}))
                .collect(),
        )
    } else if a.merges {
        Value::Array(
            model
                .merges()
                .iter()
                .enumerate()
                .map(|(rank, m)| {
                    json!({
                        "rank": rank,
                        "left": model.display_token(m.left),
                        "right": model.display_token(m.right),
                        "output": model.display_token(m.output),
                    })
                })
                .collect(),
        )
    } else if a.graph {
        let graph = build_graph(&model, &stt(&model).unreachable)?;
        serde_json::to_value(graph.dump(&model)).map_err(Error::from)?
    } else {
        let graph = build_graph(&model, &BTreeSet::new())?;
        let report = json!({
            "command": "inspect",
            "input": a.input.display().to_string(),
            "mode": mode_name(model.mode()),
            "vocab_size": model.vocab_size(),
            "merges": model.merges().len(),
            "special_tokens": tokens(&model, model.vocab().specials().iter().copied()),
            "ignore_merges": model.ignore_merges(),
            "byte_fallback": model.byte_fallback(),
            "unk_token": model.unk_token().map(|t| model.display_token(t)),
            "max_token_length": model.max_token_length(),
            "atomic_tokens": graph.atomics().len(),
            "leaf_tokens": graph.leaves().len(),
        });
        return emit(&report, json, None);
    };
    emit(&dump, true, None)
}

