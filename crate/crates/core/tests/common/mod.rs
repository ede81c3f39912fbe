#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokforge::model::{Mode, ModelParts, PreTokenizerConfig, TokenId, TokenizerModel, Vocab};
use tokforge::trainer::{train_bpe, TrainerConfig};
use tokforge::{stt, SegmentCounts};

pub const ALPHABET: &[u8] = b"abcd";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Byte-level model over `alphabet` with up to `n_merges` random merges,
/// split on whitespace. Each merge produces a token no earlier merge
/// produced, so there are no duplicate producers.
pub fn random_model(rng: &mut impl Rng, n_merges: usize, alphabet: &[u8]) -> TokenizerModel {
    let mut vocab = Vocab::from_tokens(alphabet.iter().map(|&b| vec![b])).unwrap();
    let mut merges = Vec::new();
    let mut attempts = 0;
    while merges.len() < n_merges && attempts < n_merges * 20 {
        attempts += 1;
        let l = rng.random_range(0..vocab.len()) as TokenId;
        let r = rng.random_range(0..vocab.len()) as TokenId;
        let mut cat = vocab.token(l).unwrap().to_vec();
        cat.extend_from_slice(vocab.token(r).unwrap());
        if cat.len() > 8 || vocab.contains(&cat) {
            continue;
        }
        vocab.push(cat).unwrap();
        merges.push((l, r));
    }
    let mut parts = ModelParts::new(Mode::ByteLevel, vocab);
    parts.pre_tokenizer = PreTokenizerConfig::whitespace();
    parts.merges = merges;
    TokenizerModel::new(parts).unwrap()
}

/// Merge list drawn with replacement from all pairs of existing tokens,
/// including duplicate producers and repeated pairs.
pub fn random_model_with_duplicates(rng: &mut impl Rng, n_merges: usize) -> TokenizerModel {
    let mut vocab = Vocab::from_tokens(ALPHABET.iter().map(|&b| vec![b])).unwrap();
    let mut merges = Vec::new();
    for _ in 0..n_merges {
        let l = rng.random_range(0..vocab.len()) as TokenId;
        let r = rng.random_range(0..vocab.len()) as TokenId;
        let mut cat = vocab.token(l).unwrap().to_vec();
        cat.extend_from_slice(vocab.token(r).unwrap());
        if !vocab.contains(&cat) {
            vocab.push(cat).unwrap();
        }
        merges.push((l, r));
    }
    let mut parts = ModelParts::new(Mode::ByteLevel, vocab);
    parts.pre_tokenizer = PreTokenizerConfig::whitespace();
    parts.merges = merges;
    TokenizerModel::new(parts).unwrap()
}

pub fn random_word(rng: &mut impl Rng, max_len: usize, alphabet: &[u8]) -> String {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())] as char)
        .collect()
}

pub fn random_segments(rng: &mut impl Rng, n: usize, max_len: usize, alphabet: &[u8]) -> Vec<String> {
    (0..n).map(|_| random_word(rng, max_len, alphabet)).collect()
}

/// Lowest-rank merge first, leftmost among equal ranks, rescanning the
/// whole sequence after every merge.
pub fn brute_force_tokenize(model: &TokenizerModel, segment: &[u8]) -> Vec<TokenId> {
    let mut pieces: Vec<Vec<u8>> = segment.iter().map(|&b| vec![b]).collect();
    let merges: Vec<(Vec<u8>, Vec<u8>)> = model
        .merges()
        .iter()
        .map(|m| {
            (
                model.token_bytes(m.left).unwrap().to_vec(),
                model.token_bytes(m.right).unwrap().to_vec(),
            )
        })
        .collect();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..pieces.len().saturating_sub(1) {
            let rank = merges
                .iter()
                .position(|(l, r)| *l == pieces[i] && *r == pieces[i + 1]);
            if let Some(rank) = rank {
                if best.is_none_or(|(b, _)| rank < b) {
                    best = Some((rank, i));
                }
            }
        }
        let Some((_, i)) = best else { break };
        let right = pieces.remove(i + 1);
        pieces[i].extend(right);
    }
    pieces.iter().map(|p| model.token_id(p).unwrap()).collect()
}

/// A byte-level model trained on a random corpus, retried until its
/// self-tokenization test is clean.
pub fn trained_model(rng: &mut impl Rng, merges: usize) -> (TokenizerModel, Vec<String>) {
    loop {
        let corpus = random_segments(rng, 200, 8, ALPHABET);
        let segs = SegmentCounts::from_segments(&corpus);
        let cfg = TrainerConfig::new(Mode::ByteLevel, 256 + merges).with_min_pair_frequency(1);
        let mut parts = train_bpe(&segs, &cfg).unwrap().to_parts();
        parts.pre_tokenizer = PreTokenizerConfig::whitespace();
        let m = TokenizerModel::new(parts).unwrap();
        if stt(&m).count == 0 {
            return (m, corpus);
        }
    }
}

/// Contents of the tokens flagged by the self-tokenization test.
pub fn unreachable_contents(model: &TokenizerModel) -> BTreeSet<Vec<u8>> {
    stt(model)
        .unreachable
        .iter()
        .map(|&t| model.token_bytes(t).unwrap().to_vec())
        .collect()
}

/// Pseudo-natural text: words built from syllables, drawn with a skewed
/// distribution, with punctuation, digits and some non-ASCII letters.
pub fn synthetic_corpus(target_bytes: usize, seed: u64) -> Vec<String> {
    const SYLLABLES: &[&str] = &[
        "ka", "la", "ma", "ta", "se", "le", "me", "ne", "ki", "li", "mi", "ti", "ko", "lo", "mo",
        "to", "su", "lu", "mu", "tu", "rä", "sõ", "jö", "pü", "va", "vi", "ja", "ju", "st", "ng",
        "ks", "ll", "ee", "aa", "ii", "uu", "öö", "äi", "ei", "oi",
    ];
    let mut rng = rng(seed);
    let words: Vec<String> = (0..5000)
        .map(|_| {
            let n = rng.random_range(1..=4);
            (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
        })
        .collect();
    let mut docs = Vec::new();
    let mut total = 0;
    while total < target_bytes {
        let mut doc = String::new();
        let n_words = rng.random_range(5..40);
        for i in 0..n_words {
            // squaring a uniform draw skews picks towards the front
            let u: f64 = rng.random();
            let w = &words[((u * u) * words.len() as f64) as usize];
            if i > 0 {
                doc.push(' ');
            }
            if i == 0 || rng.random_bool(0.05) {
                let mut cs = w.chars();
                doc.extend(cs.next().unwrap().to_uppercase());
                doc.push_str(cs.as_str());
            } else {
                doc.push_str(w);
            }
            if rng.random_bool(0.03) {
                doc.push_str(&format!(" {}", rng.random_range(0..2000)));
            }
            if rng.random_bool(0.08) {
                doc.push(',');
            }
        }
        doc.push('.');
        total += doc.len();
        docs.push(doc);
    }
    docs
}

fn toy(tokens: &[&str], merges: &[(&str, &str)], ignore_merges: bool) -> TokenizerModel {
    let vocab = Vocab::from_tokens(tokens.iter().map(|t| t.as_bytes())).unwrap();
    let mut parts = ModelParts::new(Mode::ByteLevel, vocab);
    parts.pre_tokenizer = PreTokenizerConfig::whitespace();
    parts.merges = merges
        .iter()
        .map(|(l, r)| (parts.vocab.id(l.as_bytes()).unwrap(), parts.vocab.id(r.as_bytes()).unwrap()))
        .collect();
    parts.ignore_merges = ignore_merges;
    TokenizerModel::new(parts).unwrap()
}

/// vocab {a,b,c,d,ab,abc}, merges [(a,b), (ab,c)].
pub fn toy1() -> TokenizerModel {
    toy(&["a", "b", "c", "d", "ab", "abc"], &[("a", "b"), ("ab", "c")], false)
}

/// All 256 bytes plus `xy` from the merge (x, y).
pub fn xyz_base(ignore_merges: bool) -> TokenizerModel {
    let mut parts = ModelParts::new(
        Mode::ByteLevel,
        Vocab::from_tokens((0..=255u8).map(|b| vec![b]).chain([b"xy".to_vec()])).unwrap(),
    );
    parts.pre_tokenizer = PreTokenizerConfig::whitespace();
    parts.merges = vec![(b'x' as TokenId, b'y' as TokenId)];
    parts.ignore_merges = ignore_merges;
    TokenizerModel::new(parts).unwrap()
}
