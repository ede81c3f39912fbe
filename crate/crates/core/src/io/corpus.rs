use std::io::{BufRead, BufReader, Read};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One document per line.
    #[default]
    PlainLines,
    /// One JSON object per line; the document is its `"text"` string.
    JsonLinesTextField,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusSource {
    /// `None` reads standard input.
    pub path: Option<PathBuf>,
    pub format: CorpusFormat,
    /// Stop after the document that brings the character total to this
    /// value or beyond.
    pub budget_chars: Option<u64>,
    /// Shuffle documents with this seed before applying the budget. Without
    /// a seed, file order is kept.
    pub seed: Option<u64>,
}

impl CorpusSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn with_format(mut self, format: CorpusFormat) -> Self {
        self.format = format;
        self
    }

    pub fn with_budget(mut self, chars: u64) -> Self {
        self.budget_chars = Some(chars);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn display_path(&self) -> PathBuf {
        self.path.clone().unwrap_or_else(|| PathBuf::from("<stdin>"))
    }
}

/// Documents of a corpus, in order, honouring the character budget.
pub struct DocumentStream {
    lines: std::io::Lines<BufReader<Box<dyn Read + Send>>>,
    line_no: usize,
    format: CorpusFormat,
    path: PathBuf,
    budget: Option<u64>,
    seen_chars: u64,
    shuffled: Option<std::vec::IntoIter<String>>,
    failed: bool,
}

impl DocumentStream {
    fn next_raw(&mut self) -> Option<Result<String>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                    return Some(Err(self.format_error(self.line_no + 1, "invalid UTF-8")))
                }
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                continue;
            }
            return Some(match self.format {
                CorpusFormat::PlainLines => Ok(line.to_owned()),
                CorpusFormat::JsonLinesTextField => self.parse_json_line(line),
            });
        }
    }

    fn parse_json_line(&self, line: &str) -> Result<String> {
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| self.format_error(self.line_no, &format!("invalid JSON: {e}")))?;
        match value.get("text") {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.format_error(self.line_no, "\"text\" is not a string")),
            None => Err(self.format_error(self.line_no, "missing \"text\" field")),
        }
    }

    fn format_error(&self, line: usize, message: &str) -> Error {
        Error::Format {
            path: self.path.clone(),
            line,
            message: message.to_owned(),
        }
    }
}

impl Iterator for DocumentStream {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Result<String>> {
        if self.failed {
            return None;
        }
        if self.budget.is_some_and(|b| self.seen_chars >= b) {
            return None;
        }
        let doc = match &mut self.shuffled {
            Some(docs) => Ok(docs.next()?),
            None => self.next_raw()?,
        };
        match &doc {
            Ok(d) => self.seen_chars += d.chars().count() as u64,
            Err(_) => self.failed = true,
        }
        Some(doc)
    }
}

/// Opens a corpus for streaming. With a seed the whole corpus is read and
/// shuffled up front; otherwise documents are read lazily.
pub fn stream_documents(src: &CorpusSource) -> Result<DocumentStream> {
    let reader: Box<dyn Read + Send> = match &src.path {
        Some(p) => super::open_maybe_gzip(p)?,
        None => Box::new(std::io::stdin()),
    };
    let mut stream = DocumentStream {
        lines: BufReader::with_capacity(1 << 16, reader).lines(),
        line_no: 0,
        format: src.format,
        path: src.display_path(),
        budget: src.budget_chars,
        seen_chars: 0,
        shuffled: None,
        failed: false,
    };
    if let Some(seed) = src.seed {
        let mut all = Vec::new();
        while let Some(doc) = stream.next_raw() {
            all.push(doc?);
        }
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        stream.shuffled = Some(all.into_iter());
    }
    Ok(stream)
}

pub fn read_documents(src: &CorpusSource) -> Result<Vec<String>> {
    stream_documents(src)?.collect()
}
