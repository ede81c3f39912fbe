//! Tokenizer JSON.
//!
//! Files are written in a canonical form: sorted keys, two-space
//! indentation, a trailing newline. Loading also accepts the subset of the
//! widespread `tokenizer.json` layout that maps onto [`TokenizerModel`]:
//! BPE models with `ByteLevel`, `Split` + `ByteLevel` or `Metaspace`
//! pre-tokenizers, `Prepend`/`Replace`/`NFKC` normalizers and
//! `added_tokens`.

use std::io::Read;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{
    Mode, ModelParts, NormalizerConfig, PreTokenizerConfig, PreTokenizerKind, TokenId,
    TokenizerModel, Vocab, GPT2_PATTERN, WORD_MARKER,
};

const FORMAT_VERSION: &str = "1";

pub fn load_tokenizer(path: &Path) -> Result<TokenizerModel> {
    let mut text = String::new();
    super::open_maybe_gzip(path)?.read_to_string(&mut text)?;
    from_json_str(&text)
}

pub fn save_tokenizer(model: &TokenizerModel, path: &Path) -> Result<()> {
    let text = to_json_string(model)?;
    super::write_atomic(path, |w| {
        std::io::Write::write_all(w, text.as_bytes())?;
        Ok(())
    })
}

pub fn to_json_string(model: &TokenizerModel) -> Result<String> {
    let mut out = serde_json::to_string_pretty(&to_json(model))?;
    out.push('\n');
    Ok(out)
}

fn to_json(model: &TokenizerModel) -> Value {
    let name = |id: TokenId| model.display_token(id);
    let vocab: Map<String, Value> = model.vocab().iter().map(|(id, _)| (name(id), json!(id))).collect();
    let pairs: Vec<(String, String)> = model.merges().iter().map(|m| (name(m.left), name(m.right))).collect();
    let as_arrays = pairs.iter().any(|(l, r)| l.contains(' ') || r.contains(' '));
    let merges: Vec<Value> = pairs
        .into_iter()
        .map(|(l, r)| if as_arrays { json!([l, r]) } else { json!(format!("{l} {r}")) })
        .collect();

    let pre = model.pre_tokenizer();
    let pre_tokenizer = match &pre.kind {
        PreTokenizerKind::RegexSplit { pattern } => {
            json!({"type": "RegexSplit", "pattern": pattern, "byte_mapping": pre.byte_mapping})
        }
        PreTokenizerKind::WhitespaceSplit => json!({"type": "WhitespaceSplit", "byte_mapping": pre.byte_mapping}),
        PreTokenizerKind::None => json!({"type": "None", "byte_mapping": pre.byte_mapping}),
    };
    let normalizer = match model.normalizer() {
        NormalizerConfig::Identity => json!({"type": "Identity"}),
        NormalizerConfig::SentencePiece {
            nfkc,
            add_dummy_prefix,
            remove_extra_whitespace,
        } => json!({
            "type": "SentencePiece",
            "nfkc": nfkc,
            "add_dummy_prefix": add_dummy_prefix,
            "remove_extra_whitespace": remove_extra_whitespace,
        }),
    };
    let specials: Vec<String> = model.vocab().specials().iter().map(|&id| name(id)).collect();

    json!({
        "version": FORMAT_VERSION,
        "mode": model.mode(),
        "model": {
            "type": "BPE",
            "vocab": vocab,
            "merges": merges,
            "ignore_merges": model.ignore_merges(),
            "max_token_length": model.max_token_length(),
            "unk_token": model.unk_token().map(name),
            "byte_fallback": model.byte_fallback(),
        },
        "pre_tokenizer": pre_tokenizer,
        "normalizer": normalizer,
        "special_tokens": specials,
    })
}

fn type_of(v: &Value) -> Option<&str> {
    v.get("type").and_then(Value::as_str)
}

fn flag(v: &Value, key: &str, default: bool) -> Result<bool> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(Value::Bool(b)) => Ok(*b),
        Some(other) => Err(Error::inconsistent(format!("{key} must be a boolean, got {other}"))),
    }
}

fn is_null_or_empty(v: Option<&Value>) -> bool {
    match v {
        None | Some(Value::Null) => true,
        Some(Value::String(s)) => s.is_empty(),
        _ => false,
    }
}

/// Flattens `Sequence` nodes of pre-tokenizers or normalizers.
fn steps<'a>(v: &'a Value, list_key: &str) -> Vec<&'a Value> {
    match (type_of(v), v.get(list_key).and_then(Value::as_array)) {
        (Some("Sequence"), Some(items)) => items.iter().flat_map(|i| steps(i, list_key)).collect(),
        _ if v.is_null() => Vec::new(),
        _ => vec![v],
    }
}

fn infer_mode(root: &Value) -> Result<Mode> {
    if let Some(m) = root.get("mode") {
        return serde_json::from_value(m.clone()).map_err(|_| Error::unsupported(format!("unknown mode {m}")));
    }
    let pre = steps(root.get("pre_tokenizer").unwrap_or(&Value::Null), "pretokenizers");
    let norm = steps(root.get("normalizer").unwrap_or(&Value::Null), "normalizers");
    let dec = steps(root.get("decoder").unwrap_or(&Value::Null), "decoders");
    let has = |list: &[&Value], t: &str| list.iter().any(|v| type_of(v) == Some(t));
    let marker = WORD_MARKER.to_string();
    let replaces_space = norm
        .iter()
        .any(|v| matches!(type_of(v), Some("Replace" | "Prepend")) && v.to_string().contains(&marker));
    if has(&pre, "ByteLevel") {
        Ok(Mode::ByteLevel)
    } else if has(&pre, "Metaspace") || replaces_space {
        Ok(Mode::SentencePiece)
    } else if has(&dec, "ByteLevel") {
        Ok(Mode::ByteLevel)
    } else {
        Err(Error::unsupported("cannot tell whether the model is byte-level or SentencePiece-style"))
    }
}

/// Returns the pre-tokenizer and, for `Metaspace`, the normalizer it
/// implies.
fn parse_pre_tokenizer(v: &Value, mode: Mode) -> Result<(PreTokenizerConfig, Option<NormalizerConfig>)> {
    let items = steps(v, "pretokenizers");
    let kinds: Vec<&str> = items.iter().map(|i| type_of(i).unwrap_or("?")).collect();
    let byte_level = |bl: &Value, regex_expected: bool| -> Result<bool> {
        if flag(bl, "add_prefix_space", false)? {
            return Err(Error::unsupported("ByteLevel add_prefix_space=true is not supported"));
        }
        let use_regex = flag(bl, "use_regex", true)?;
        if use_regex && regex_expected {
            return Err(Error::unsupported("ByteLevel use_regex=true after a Split pre-tokenizer"));
        }
        Ok(use_regex)
    };
    match kinds.as_slice() {
        [] => Ok((
            match mode {
                Mode::ByteLevel => PreTokenizerConfig {
                    kind: PreTokenizerKind::None,
                    byte_mapping: true,
                },
                Mode::SentencePiece => PreTokenizerConfig::none(),
            },
            None,
        )),
        ["ByteLevel"] => {
            let cfg = if byte_level(items[0], false)? {
                PreTokenizerConfig::regex(GPT2_PATTERN)
            } else {
                PreTokenizerConfig {
                    kind: PreTokenizerKind::None,
                    byte_mapping: true,
                }
            };
            Ok((cfg, None))
        }
        ["Split", "ByteLevel"] => {
            let split = items[0];
            let pattern = split
                .get("pattern")
                .and_then(|p| p.get("Regex"))
                .and_then(Value::as_str)
                .ok_or_else(|| Error::unsupported("Split pre-tokenizer without a Regex pattern"))?;
            if split.get("behavior").and_then(Value::as_str) != Some("Isolated") || flag(split, "invert", false)? {
                return Err(Error::unsupported("only Split with behavior=Isolated, invert=false is supported"));
            }
            byte_level(items[1], true)?;
            Ok((PreTokenizerConfig::regex(pattern), None))
        }
        ["Metaspace"] => {
            let m = items[0];
            if m.get("replacement").and_then(Value::as_str).is_some_and(|r| r != WORD_MARKER.to_string()) {
                return Err(Error::unsupported("Metaspace with a replacement other than U+2581"));
            }
            let prepend = match m.get("prepend_scheme").and_then(Value::as_str) {
                Some("never") => false,
                Some(_) => true,
                None => flag(m, "add_prefix_space", true)?,
            };
            let pre = if flag(m, "split", true)? {
                PreTokenizerConfig::whitespace()
            } else {
                PreTokenizerConfig::none()
            };
            let norm = NormalizerConfig::SentencePiece {
                nfkc: false,
                add_dummy_prefix: prepend,
                remove_extra_whitespace: false,
            };
            Ok((pre, Some(norm)))
        }
        ["RegexSplit"] => {
            let pattern = items[0]
                .get("pattern")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::inconsistent("RegexSplit without a pattern"))?;
            let mut cfg = PreTokenizerConfig::regex(pattern);
            cfg.byte_mapping = flag(items[0], "byte_mapping", false)?;
            Ok((cfg, None))
        }
        ["WhitespaceSplit"] => {
            let mut cfg = PreTokenizerConfig::whitespace();
            cfg.byte_mapping = flag(items[0], "byte_mapping", false)?;
            Ok((cfg, None))
        }
        ["None"] => {
            let mut cfg = PreTokenizerConfig::none();
            cfg.byte_mapping = flag(items[0], "byte_mapping", false)?;
            Ok((cfg, None))
        }
        other => Err(Error::unsupported(format!("pre-tokenizer {other:?}"))),
    }
}

fn parse_normalizer(v: &Value, mode: Mode, implied: Option<NormalizerConfig>) -> Result<NormalizerConfig> {
    let items = steps(v, "normalizers");
    if items.is_empty() {
        return match (mode, implied) {
            (_, Some(n)) => Ok(n),
            (Mode::ByteLevel, None) => Ok(NormalizerConfig::Identity),
            (Mode::SentencePiece, None) => Err(Error::unsupported("SentencePiece-style model without a normalizer")),
        };
    }
    if let [one] = items.as_slice() {
        match type_of(one) {
            Some("Identity") => return Ok(NormalizerConfig::Identity),
            Some("SentencePiece") => {
                return Ok(NormalizerConfig::SentencePiece {
                    nfkc: flag(one, "nfkc", true)?,
                    add_dummy_prefix: flag(one, "add_dummy_prefix", true)?,
                    remove_extra_whitespace: flag(one, "remove_extra_whitespace", true)?,
                })
            }
            _ => {}
        }
    }
    let marker = WORD_MARKER.to_string();
    let (mut nfkc, mut prefix, mut replace) = (false, false, false);
    for item in items {
        match type_of(item) {
            Some("NFKC") => nfkc = true,
            Some("Prepend") if item.get("prepend").and_then(Value::as_str) == Some(&marker) => prefix = true,
            Some("Replace")
                if item.get("pattern").and_then(|p| p.get("String")).and_then(Value::as_str) == Some(" ")
                    && item.get("content").and_then(Value::as_str) == Some(&marker) =>
            {
                replace = true
            }
            _ => return Err(Error::unsupported(format!("normalizer step {item}"))),
        }
    }
    match (mode, replace, implied) {
        (Mode::SentencePiece, true, _) => Ok(NormalizerConfig::SentencePiece {
            nfkc,
            add_dummy_prefix: prefix,
            remove_extra_whitespace: false,
        }),
        (Mode::SentencePiece, false, Some(NormalizerConfig::SentencePiece { add_dummy_prefix, .. })) if !prefix => {
            Ok(NormalizerConfig::SentencePiece {
                nfkc,
                add_dummy_prefix,
                remove_extra_whitespace: false,
            })
        }
        _ => Err(Error::unsupported("normalizer does not match the model's mode")),
    }
}

/// Parses a token string as stored in the file.
fn token_bytes(mode: Mode, s: &str) -> Option<Vec<u8>> {
    match mode {
        Mode::ByteLevel => crate::byte_units::decode(s),
        Mode::SentencePiece => Some(s.as_bytes().to_vec()),
    }
}

pub fn from_json_str(text: &str) -> Result<TokenizerModel> {
    let root: Value = serde_json::from_str(text)?;
    if !root.is_object() {
        return Err(Error::unsupported("top level is not a JSON object"));
    }
    let model = root.get("model").ok_or_else(|| Error::unsupported("missing \"model\""))?;
    match type_of(model) {
        Some("BPE") => {}
        Some(t) => return Err(Error::unsupported(format!("model type {t}"))),
        None if model.get("merges").is_some() => {}
        None => return Err(Error::unsupported("model without a type")),
    }
    if !model.get("dropout").is_none_or(Value::is_null) {
        return Err(Error::unsupported("BPE dropout"));
    }
    if !is_null_or_empty(model.get("continuing_subword_prefix")) || !is_null_or_empty(model.get("end_of_word_suffix")) {
        return Err(Error::unsupported("subword prefixes and suffixes"));
    }

    let mode = infer_mode(&root)?;
    let (pre_tokenizer, implied) = parse_pre_tokenizer(root.get("pre_tokenizer").unwrap_or(&Value::Null), mode)?;
    let normalizer = parse_normalizer(root.get("normalizer").unwrap_or(&Value::Null), mode, implied)?;

    let vocab_obj = model
        .get("vocab")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::inconsistent("model.vocab must be an object"))?;
    let added: Vec<&Value> = root
        .get("added_tokens")
        .and_then(Value::as_array)
        .map(|a| a.iter().collect())
        .unwrap_or_default();

    let id_of = |v: &Value| -> Result<usize> {
        v.as_u64()
            .and_then(|n| usize::try_from(n).ok())
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or_else(|| Error::inconsistent(format!("invalid token id {v}")))
    };
    let mut slots: Vec<Option<Vec<u8>>> = Vec::new();
    let mut undecodable: Vec<(usize, &str)> = Vec::new();
    let place = |slots: &mut Vec<Option<Vec<u8>>>, id: usize, bytes: Vec<u8>| -> Result<()> {
        if slots.len() <= id {
            slots.resize(id + 1, None);
        }
        match &slots[id] {
            Some(existing) if *existing != bytes => Err(Error::inconsistent(format!("id {id} is assigned twice"))),
            _ => {
                slots[id] = Some(bytes);
                Ok(())
            }
        }
    };
    for (s, v) in vocab_obj {
        let id = id_of(v)?;
        match token_bytes(mode, s) {
            Some(b) => place(&mut slots, id, b)?,
            None => undecodable.push((id, s)),
        }
    }
    let mut special_ids = Vec::new();
    for a in &added {
        let id = id_of(a.get("id").unwrap_or(&Value::Null))?;
        let content = a
            .get("content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::inconsistent("added token without content"))?;
        let raw = content.as_bytes().to_vec();
        let same_as_vocab = slots.get(id).and_then(Option::as_ref).is_some_and(|b| *b == raw)
            || token_bytes(mode, content).is_some_and(|b| slots.get(id).and_then(Option::as_ref) == Some(&b));
        if !same_as_vocab {
            if slots.get(id).is_some_and(Option::is_some) {
                return Err(Error::inconsistent(format!("added token {content:?} conflicts with id {id}")));
            }
            undecodable.retain(|&(u, _)| u != id);
            place(&mut slots, id, raw)?;
        }
        if flag(a, "special", false)? {
            special_ids.push(id as TokenId);
        }
    }
    if let Some((_, s)) = undecodable.first() {
        return Err(Error::inconsistent(format!("token {s:?} is not in the byte-unit alphabet")));
    }
    let mut vocab = Vocab::new();
    for (id, slot) in slots.into_iter().enumerate() {
        let bytes = slot.ok_or_else(|| Error::inconsistent(format!("token ids are not contiguous: {id} is missing")))?;
        vocab.push(bytes)?;
    }
    let lookup = |vocab: &Vocab, s: &str| -> Result<TokenId> {
        token_bytes(mode, s)
            .and_then(|b| vocab.id(&b))
            .or_else(|| vocab.id(s.as_bytes()))
            .ok_or_else(|| Error::inconsistent(format!("token {s:?} is not in the vocabulary")))
    };
    for id in special_ids {
        vocab.mark_special(id)?;
    }
    if let Some(list) = root.get("special_tokens").and_then(Value::as_array) {
        for s in list {
            let s = s.as_str().ok_or_else(|| Error::inconsistent("special token is not a string"))?;
            let id = lookup(&vocab, s)?;
            vocab.mark_special(id)?;
        }
    }

    let mut merges = Vec::new();
    for (rank, m) in model.get("merges").and_then(Value::as_array).into_iter().flatten().enumerate() {
        let (l, r) = match m {
            Value::String(s) => {
                let mut it = s.split(' ');
                match (it.next(), it.next(), it.next()) {
                    (Some(l), Some(r), None) => (l, r),
                    _ => return Err(Error::inconsistent(format!("merge {rank} {s:?} is not \"left right\""))),
                }
            }
            Value::Array(a) => match a.as_slice() {
                [Value::String(l), Value::String(r)] => (l.as_str(), r.as_str()),
                _ => return Err(Error::inconsistent(format!("merge {rank} is not a pair of strings"))),
            },
            _ => return Err(Error::inconsistent(format!("merge {rank} has an unknown shape"))),
        };
        merges.push((lookup(&vocab, l)?, lookup(&vocab, r)?));
    }

    let unk_token = match model.get("unk_token") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(lookup(&vocab, s)?),
        Some(other) => return Err(Error::inconsistent(format!("unk_token {other} is not a string"))),
    };
    let max_token_length = match model.get("max_token_length") {
        None => mode.default_max_token_length(),
        Some(Value::Null) => None,
        Some(v) => Some(id_of(v)?),
    };

    let mut parts = ModelParts::new(mode, vocab);
    parts.merges = merges;
    parts.pre_tokenizer = pre_tokenizer;
    parts.normalizer = normalizer;
    parts.ignore_merges = flag(model, "ignore_merges", false)?;
    parts.max_token_length = max_token_length;
    parts.unk_token = unk_token;
    parts.byte_fallback = flag(model, "byte_fallback", false)?;
    TokenizerModel::new(parts)
}
