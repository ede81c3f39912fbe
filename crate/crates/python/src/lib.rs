//! Python bindings: `import tokforge`.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tokforge::analysis::{evaluate, EvalOptions, RenyiNormalization, DEFAULT_RENYI_ALPHA};
use tokforge::io::{from_json_str, to_json_string};
use tokforge::pruning::{
    id_prune_order, leaf_frequency_prune_order, merge_based_prune_order, naive_frequency_prune_order,
};
use tokforge::trainer::segmenter;
use tokforge::{
    apply_prune, collect_stats, continued_extend, fvt_transfer, load_tokenizer, naive_extend,
    save_tokenizer, stt, train_bpe, EmbeddingMatrix, Mode, NaiveStrategy, PruneOrder,
    SegmentCounts, TokenId, TokenizerModel, TrainerConfig,
};

create_exception!(tokforge, TokforgeError, PyValueError);

fn err(e: tokforge::Error) -> PyErr {
    TokforgeError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "byte-level" | "byte_level" => Ok(Mode::ByteLevel),
        "sentencepiece" => Ok(Mode::SentencePiece),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    }
}

fn trainer_config(mode: Mode, target: usize, min_pair_frequency: u64) -> TrainerConfig {
    TrainerConfig::new(mode, target).with_min_pair_frequency(min_pair_frequency)
}

/// A byte-level or SentencePiece-style BPE tokenizer.
#[pyclass(name = "Tokenizer", module = "tokforge", frozen)]
struct PyTokenizer {
    inner: TokenizerModel,
}

impl From<TokenizerModel> for PyTokenizer {
    fn from(inner: TokenizerModel) -> Self {
        Self { inner }
    }
}

impl PyTokenizer {
    fn segments(&self, py: Python<'_>, docs: Vec<String>) -> SegmentCounts {
        py.detach(|| SegmentCounts::from_documents(&self.inner, &docs))
    }

    fn order(&self, py: Python<'_>, method: &str, docs: Option<Vec<String>>) -> PyResult<PruneOrder> {
        if method == "last-id" {
            return Ok(id_prune_order(&self.inner));
        }
        let docs = docs.ok_or_else(|| PyValueError::new_err(format!("{method} needs documents")))?;
        let segments = self.segments(py, docs);
        let model = &self.inner;
        py.detach(|| {
            let stats = collect_stats(model, &segments)?;
            match method {
                "leaf-freq" => leaf_frequency_prune_order(model, &stats, &stt(model).unreachable),
                "merge-based" => merge_based_prune_order(model, &stats),
                "naive-freq" => naive_frequency_prune_order(model, &stats),
                other => Err(tokforge::Error::InvalidArgument(format!("unknown prune method {other:?}"))),
            }
        })
        .map_err(err)
    }
}

#[pymethods]
impl PyTokenizer {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_tokenizer(&path).map(Self::from).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        from_json_str(text).map(Self::from).map_err(err)
    }

    /// Trains from scratch on `docs` until the vocabulary reaches `vocab_size`.
    #[staticmethod]
    #[pyo3(signature = (docs, vocab_size, mode = "byte-level", min_pair_frequency = 2))]
    fn train(
        py: Python<'_>,
        docs: Vec<String>,
        vocab_size: usize,
        mode: &str,
        min_pair_frequency: u64,
    ) -> PyResult<Self> {
        let mode = parse_mode(mode)?;
        let cfg = trainer_config(mode, vocab_size, min_pair_frequency);
        py.detach(|| {
            let segments = SegmentCounts::from_documents(&segmenter(mode), &docs);
            train_bpe(&segments, &cfg)
        })
        .map(Self::from)
        .map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_tokenizer(&self.inner, &path).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        to_json_string(&self.inner).map_err(err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode() {
            Mode::ByteLevel => "byte-level",
            Mode::SentencePiece => "sentencepiece",
        }
    }

    fn __len__(&self) -> usize {
        self.inner.vocab_size()
    }

    fn __repr__(&self) -> String {
        format!(
            "Tokenizer(mode={:?}, vocab_size={}, merges={})",
            self.mode(),
            self.inner.vocab_size(),
            self.inner.merges().len()
        )
    }

    /// Token as stored in the tokenizer file.
    fn token(&self, id: TokenId) -> PyResult<String> {
        self.inner.token_bytes(id).map_err(err)?;
        Ok(self.inner.display_token(id))
    }

    fn token_id(&self, token: &str) -> Option<TokenId> {
        let bytes = self.inner.parse_display(token)?;
        self.inner.token_id(&bytes)
    }

    /// `(left, right, output)` ids in rank order.
    fn merges(&self) -> Vec<(TokenId, TokenId, TokenId)> {
        self.inner.merges().iter().map(|m| (m.left, m.right, m.output)).collect()
    }

    #[pyo3(signature = (text, merge_skipping = true))]
    fn encode(&self, text: &str, merge_skipping: bool) -> PyResult<Vec<TokenId>> {
        self.inner.tokenize_with(text, merge_skipping).map_err(err)
    }

    fn decode(&self, ids: Vec<TokenId>) -> PyResult<String> {
        self.inner.decode(&ids).map_err(err)
    }

    /// Ids of the tokens that do not tokenize to themselves.
    fn stt(&self, py: Python<'_>) -> Vec<TokenId> {
        py.detach(|| stt(&self.inner)).unreachable.into_iter().collect()
    }

    /// Returns the extended tokenizer and the ids it added.
    #[pyo3(signature = (docs, n_new, method = "continued", strategy = None, min_pair_frequency = 2))]
    fn extend(
        &self,
        py: Python<'_>,
        docs: Vec<String>,
        n_new: usize,
        method: &str,
        strategy: Option<&str>,
        min_pair_frequency: u64,
    ) -> PyResult<(Self, Vec<TokenId>)> {
        let target = self.inner.vocab_size() + n_new;
        let cfg = trainer_config(self.inner.mode(), target, min_pair_frequency);
        let strategy = match (method, strategy) {
            ("continued", None) => None,
            ("naive", None | Some("regen")) => Some(NaiveStrategy::Regen),
            ("naive", Some("append")) => Some(NaiveStrategy::AppendMergeList),
            _ => {
                return Err(PyValueError::new_err(format!(
                    "unsupported method/strategy {method:?}/{strategy:?}"
                )))
            }
        };
        let segments = self.segments(py, docs);
        let (model, report) = py
            .detach(|| match strategy {
                None => continued_extend(&self.inner, &segments, n_new, &cfg),
                Some(s) => naive_extend(&self.inner, &segments, n_new, s, &cfg),
            })
            .map_err(err)?;
        Ok((model.into(), report.added_tokens))
    }

    /// Ids in the order `method` would remove them.
    #[pyo3(signature = (docs = None, method = "leaf-freq"))]
    fn prune_order(&self, py: Python<'_>, docs: Option<Vec<String>>, method: &str) -> PyResult<Vec<TokenId>> {
        Ok(self.order(py, method, docs)?.tokens)
    }

    /// Removes the first `k` tokens of the chosen prune order.
    #[pyo3(signature = (k, docs = None, method = "leaf-freq"))]
    fn prune(&self, py: Python<'_>, k: usize, docs: Option<Vec<String>>, method: &str) -> PyResult<Self> {
        let order = self.order(py, method, docs)?;
        apply_prune(&self.inner, &order, k).map(Self::from).map_err(err)
    }

    /// Compression, Rényi efficiency and, optionally, the unused fraction
    /// of `added` and the STT count.
    #[pyo3(signature = (docs, renyi_alpha = DEFAULT_RENYI_ALPHA, added = None, with_stt = false, merge_skipping = true))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        docs: Vec<String>,
        renyi_alpha: f64,
        added: Option<BTreeSet<TokenId>>,
        with_stt: bool,
        merge_skipping: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = EvalOptions {
            merge_skipping,
            renyi: Some((renyi_alpha, RenyiNormalization::FullVocab)),
            added,
            stt: with_stt,
        };
        let row = py.detach(|| evaluate(&self.inner, &docs, &opts)).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("byte_count", row.byte_count)?;
        out.set_item("token_count", row.token_count)?;
        out.set_item("bytes_per_token", row.bytes_per_token)?;
        out.set_item("renyi_efficiency", row.renyi_efficiency)?;
        out.set_item("unused_added_fraction", row.unused_added_fraction)?;
        out.set_item("stt_count", row.stt_count)?;
        Ok(out)
    }
}

/// Embedding rows for `new_tok`: shared tokens keep their row, new tokens
/// get the mean of the rows of their old-tokenizer decomposition.
#[pyfunction]
fn fvt(
    py: Python<'_>,
    old_tok: &PyTokenizer,
    new_tok: &PyTokenizer,
    embeddings: Vec<Vec<f32>>,
) -> PyResult<Vec<Vec<f32>>> {
    let old = EmbeddingMatrix::from_rows(&embeddings).map_err(err)?;
    let new = py
        .detach(|| fvt_transfer(&old_tok.inner, &new_tok.inner, &old))
        .map_err(err)?;
    Ok((0..new.rows()).map(|i| new.row(i).to_vec()).collect())
}

#[pymodule]
#[pyo3(name = "tokforge")]
fn tokforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTokenizer>()?;
    m.add_function(wrap_pyfunction!(fvt, m)?)?;
    m.add("TokforgeError", m.py().get_type::<TokforgeError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
