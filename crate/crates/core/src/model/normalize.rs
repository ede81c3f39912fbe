use std::borrow::Cow;

use unicode_normalization::UnicodeNormalization;

use super::{TokenizerModel, WORD_MARKER};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NormalizerConfig {
    /// Text is passed through unchanged (byte-level models).
    Identity,
    /// SentencePiece-style: optional NFKC, then spaces become `▁`.
    ///
    /// With `remove_extra_whitespace`, leading/trailing whitespace is dropped
    /// and every inner whitespace run becomes a single marker; otherwise
    /// each U+0020 is replaced one-for-one. With `add_dummy_prefix`, a
    /// marker is prepended to non-empty text so the first word looks like
    /// every other word.
    SentencePiece {
        nfkc: bool,
        add_dummy_prefix: bool,
        remove_extra_whitespace: bool,
    },
}

impl NormalizerConfig {
    pub fn sentencepiece() -> Self {
        NormalizerConfig::SentencePiece {
            nfkc: true,
            add_dummy_prefix: true,
            remove_extra_whitespace: true,
        }
    }

    pub fn apply<'a>(&self, text: &'a str) -> Cow<'a, str> {
        let NormalizerConfig::SentencePiece {
            nfkc,
            add_dummy_prefix,
            remove_extra_whitespace,
        } = *self
        else {
            return Cow::Borrowed(text);
        };
        let text: Cow<str> = if nfkc {
            Cow::Owned(text.nfkc().collect())
        } else {
            Cow::Borrowed(text)
        };
        let mut out = String::with_capacity(text.len() + 8);
        if remove_extra_whitespace {
            for word in text.split_whitespace() {
                if add_dummy_prefix || !out.is_empty() {
                    out.push(WORD_MARKER);
                }
                out.push_str(word);
            }
        } else if !text.is_empty() {
            if add_dummy_prefix {
                out.push(WORD_MARKER);
            }
            out.extend(text.chars().map(|c| if c == ' ' { WORD_MARKER } else { c }));
        }
        Cow::Owned(out)
    }

    /// Turns markers back into spaces and drops the dummy prefix.
    pub fn invert(&self, text: &str) -> String {
        match *self {
            NormalizerConfig::Identity => text.to_owned(),
            NormalizerConfig::SentencePiece {
                add_dummy_prefix, ..
            } => {
                let spaced: String = text
                    .chars()
                    .map(|c| if c == WORD_MARKER { ' ' } else { c })
                    .collect();
                match spaced.strip_prefix(' ') {
                    Some(rest) if add_dummy_prefix => rest.to_owned(),
                    _ => spaced,
                }
            }
        }
    }
}

impl TokenizerModel {
    pub fn normalize<'a>(&self, text: &'a str) -> Cow<'a, str> {
        self.normalizer.apply(text)
    }

    /// What `decode` returns for already-normalized text.
    pub fn denormalize(&self, normalized: &str) -> String {
        self.normalizer.invert(normalized)
    }
}
