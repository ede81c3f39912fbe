use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{parse_byte_fallback_token, MergeRule, Mode, TokenId, TokenizerModel};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const NO_RANK: u32 = u32::MAX;
/// Segments up to this many atoms take the scan-based merge loop.
const SHORT_SEGMENT: usize = 32;

#[derive(Clone, Copy)]
struct Symbol {
    id: TokenId,
    prev: usize,
    next: usize,
}

impl TokenizerModel {
    /// Tokenizes one pre-tokenized segment.
    ///
    /// With `allow_merge_skipping` and a model that sets `ignore_merges`, a
    /// segment that is itself a vocabulary token is emitted directly.
    /// Otherwise the lowest-rank applicable merge is applied repeatedly,
    /// leftmost occurrence first, until none applies.
    pub fn tokenize_segment(
        &self,
        segment: &[u8],
        allow_merge_skipping: bool,
    ) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        self.tokenize_segment_into(segment, allow_merge_skipping, &mut out)?;
        Ok(out)
    }

    pub(crate) fn tokenize_segment_into(
        &self,
        segment: &[u8],
        allow_merge_skipping: bool,
        out: &mut Vec<TokenId>,
    ) -> Result<()> {
        if allow_merge_skipping && self.ignore_merges {
            if let Some(id) = self.vocab.id(segment) {
                out.push(id);
                return Ok(());
            }
        }
        let start = out.len();
        self.atoms_into(segment, out)?;
        self.merge_tail(segment, out, start, |_| {});
        Ok(())
    }

    /// Tokenizes without merge skipping, reporting every merge firing.
    pub fn tokenize_segment_traced(
        &self,
        segment: &[u8],
        on_merge: impl FnMut(&MergeRule),
    ) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        self.atoms_into(segment, &mut out)?;
        self.merge_tail(segment, &mut out, 0, on_merge);
        Ok(out)
    }

    /// Normalizes, pre-tokenizes and tokenizes `text`, honouring the model's
    /// `ignore_merges` flag.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        self.tokenize_with(text, true)
    }

    pub fn tokenize_with(&self, text: &str, allow_merge_skipping: bool) -> Result<Vec<TokenId>> {
        let normalized = self.normalize(text);
        let mut out = Vec::new();
        let mut err = None;
        self.for_each_segment(&normalized, |seg| {
            if err.is_none() {
                if let Err(e) = self.tokenize_segment_into(seg.as_bytes(), allow_merge_skipping, &mut out) {
                    err = Some(e);
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Concatenates token contents and undoes the normalizer's markers.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let t = self.token_bytes(id)?;
            match self.mode {
                Mode::SentencePiece if self.byte_fallback => match parse_byte_fallback_token(t) {
                    Some(b) => bytes.push(b),
                    None => bytes.extend_from_slice(t),
                },
                _ => bytes.extend_from_slice(t),
            }
        }
        let text = String::from_utf8_lossy(&bytes);
        Ok(self.denormalize(&text))
    }

    /// Maps a segment to its atomic token ids.
    fn atoms_into(&self, segment: &[u8], out: &mut Vec<TokenId>) -> Result<()> {
        match self.mode {
            Mode::ByteLevel => {
                out.reserve(segment.len());
                for &b in segment {
                    match self.byte_ids[b as usize] {
                        Some(id) => out.push(id),
                        None => {
                            return Err(Error::UnknownAtom {
                                unit: format!("byte 0x{b:02X}"),
                            })
                        }
                    }
                }
            }
            Mode::SentencePiece => {
                let text = std::str::from_utf8(segment).map_err(|_| Error::UnknownAtom {
                    unit: "invalid UTF-8".into(),
                })?;
                let mut buf = [0u8; 4];
                for c in text.chars() {
                    if let Some(id) = self.vocab.id(c.encode_utf8(&mut buf).as_bytes()) {
                        out.push(id);
                        continue;
                    }
                    if self.byte_fallback {
                        let bytes = c.encode_utf8(&mut buf).as_bytes();
                        if let Some(ids) = bytes
                            .iter()
                            .map(|&b| self.byte_ids[b as usize])
                            .collect::<Option<Vec<_>>>()
                        {
                            out.extend(ids);
                            continue;
                        }
                    }
                    match self.unk_token {
                        Some(unk) => out.push(unk),
                        None => return Err(Error::UnknownAtom { unit: c.to_string() }),
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs the merge loop over `ids[start..]`, the atoms of `segment`, in
    /// place.
    fn merge_tail(
        &self,
        segment: &[u8],
        ids: &mut Vec<TokenId>,
        start: usize,
        mut on_merge: impl FnMut(&MergeRule),
    ) {
        let n = ids.len() - start;
        if n < 2 || self.merges.is_empty() {
            return;
        }
        if n <= SHORT_SEGMENT {
            self.merge_short(segment, ids, start, on_merge);
            return;
        }
        let mut syms: Vec<Symbol> = (0..n)
            .map(|i| Symbol {
                id: ids[start + i],
                prev: if i == 0 { NONE } else { i - 1 },
                next: if i + 1 == n { NONE } else { i + 1 },
            })
            .collect();
        let mut alive = vec![true; n];
        let mut heap = BinaryHeap::with_capacity(n);
        for i in 0..n - 1 {
            if let Some(&(rank, _)) = self.pair_ranks.get(&(syms[i].id, syms[i + 1].id)) {
                heap.push(Reverse((rank, i)));
            }
        }

        while let Some(Reverse((rank, pos))) = heap.pop() {
            if !alive[pos] {
                continue;
            }
            let next = syms[pos].next;
            if next == NONE {
                continue;
            }
            let Some(&(current, output)) = self.pair_ranks.get(&(syms[pos].id, syms[next].id))
            else {
                continue;
            };
            if current != rank {
                continue;
            }
            on_merge(&self.merges[rank as usize]);

            syms[pos].id = output;
            alive[next] = false;
            let after = syms[next].next;
            syms[pos].next = after;
            if after != NONE {
                syms[after].prev = pos;
                if let Some(&(r, _)) = self.pair_ranks.get(&(output, syms[after].id)) {
                    heap.push(Reverse((r, pos)));
                }
            }
            let before = syms[pos].prev;
            if before != NONE {
                if let Some(&(r, _)) = self.pair_ranks.get(&(syms[before].id, output)) {
                    heap.push(Reverse((r, before)));
                }
            }
        }

        ids.truncate(start);
        let mut i = 0;
        while i != NONE {
            ids.push(syms[i].id);
            i = syms[i].next;
        }
    }

    /// Merge loop for short segments: ranks of adjacent pairs live in a
    /// stack array and the minimum is found by a linear scan.
    fn merge_short(
        &self,
        segment: &[u8],
        ids: &mut Vec<TokenId>,
        start: usize,
        mut on_merge: impl FnMut(&MergeRule),
    ) {
        let mut len = ids.len() - start;
        let syms = &mut ids[start..];
        let mut ranks = [NO_RANK; SHORT_SEGMENT];
        let rank_of = |l: TokenId, r: TokenId| self.pair_ranks.get(&(l, r)).map_or(NO_RANK, |&(rank, _)| rank);
        match &self.byte_pair_ranks {
            Some(table) => {
                for (i, w) in segment.windows(2).enumerate() {
                    ranks[i] = table[(w[0] as usize) << 8 | w[1] as usize];
                }
            }
            None => {
                for i in 0..len - 1 {
                    ranks[i] = rank_of(syms[i], syms[i + 1]);
                }
            }
        }
        loop {
            let mut best = NO_RANK;
            let mut pos = 0;
            for (i, &r) in ranks[..len - 1].iter().enumerate() {
                if r < best {
                    best = r;
                    pos = i;
                }
            }
            if best == NO_RANK {
                break;
            }
            let rule = &self.merges[best as usize];
            on_merge(rule);
            syms[pos] = rule.output;
            syms.copy_within(pos + 2..len, pos + 1);
            ranks.copy_within(pos + 1..len - 1, pos);
            len -= 1;
            if pos + 1 < len {
                ranks[pos] = rank_of(syms[pos], syms[pos + 1]);
            }
            if pos > 0 {
                ranks[pos - 1] = rank_of(syms[pos - 1], syms[pos]);
            }
            if len == 1 {
                break;
            }
        }
        ids.truncate(start + len);
    }
}

#[cfg(test)]
mod tests {
    use super::super::toy::*;
    use super::super::*;

    #[test]
    fn toy1_segments() {
        let m = toy1();
        assert_eq!(m.tokenize_segment(b"abc", false).unwrap(), ids(&m, &["abc"]));
        assert_eq!(m.tokenize_segment(b"abd", false).unwrap(), ids(&m, &["ab", "d"]));
        assert_eq!(m.tokenize_segment(b"d", false).unwrap(), ids(&m, &["d"]));
        assert_eq!(m.tokenize_segment(b"", false).unwrap(), Vec::<TokenId>::new());
    }

    #[test]
    fn toy2_bc_needs_merge_skipping() {
        let m = toy2();
        assert_eq!(m.tokenize_segment(b"bc", false).unwrap(), ids(&m, &["b", "c"]));
        // the flag alone is not enough; the model must opt in
        assert_eq!(m.tokenize_segment(b"bc", true).unwrap(), ids(&m, &["b", "c"]));

        let skipping = model_with(
            &["a", "b", "c", "d", "ab", "abc", "bc"],
            &[("a", "b"), ("ab", "c")],
            |p| p.ignore_merges = true,
        );
        assert_eq!(skipping.tokenize_segment(b"bc", true).unwrap(), ids(&skipping, &["bc"]));
        assert_eq!(
            skipping.tokenize_segment(b"bc", false).unwrap(),
            ids(&skipping, &["b", "c"])
        );
    }

    #[test]
    fn equal_rank_applies_leftmost_first() {
        let m = model(&["a", "aa"], &[("a", "a")]);
        assert_eq!(m.tokenize_segment(b"aaa", false).unwrap(), ids(&m, &["aa", "a"]));
        assert_eq!(m.tokenize_segment(b"aaaa", false).unwrap(), ids(&m, &["aa", "aa"]));
    }

    #[test]
    fn lower_rank_wins_regardless_of_position() {
        let m = model(&["a", "b", "c", "ab", "bc"], &[("b", "c"), ("a", "b")]);
        assert_eq!(m.tokenize_segment(b"abc", false).unwrap(), ids(&m, &["a", "bc"]));
    }

    #[test]
    fn tokenize_and_decode_compose() {
        let m = toy1();
        assert_eq!(m.tokenize("abc abd").unwrap(), ids(&m, &["abc", "ab", "d"]));
        assert_eq!(m.tokenize("").unwrap(), Vec::<TokenId>::new());
        assert_eq!(m.tokenize("d").unwrap(), ids(&m, &["d"]));
        assert_eq!(m.decode(&ids(&m, &["ab", "d"])).unwrap(), "abd");
        assert_eq!(m.decode(&[]).unwrap(), "");
        assert!(matches!(m.decode(&[99]), Err(Error::UnknownId(99))));
    }

    #[test]
    fn missing_byte_is_unknown_atom() {
        let m = toy1();
        assert!(matches!(m.tokenize_segment(b"abz", false), Err(Error::UnknownAtom { .. })));
    }

    #[test]
    fn traced_reports_each_firing() {
        let m = toy1();
        let mut fired = Vec::new();
        let out = m
            .tokenize_segment_traced(b"abcab", |r| fired.push((r.left, r.right)))
            .unwrap();
        assert_eq!(out, ids(&m, &["abc", "ab"]));
        let ab = (id(&m, "a"), id(&m, "b"));
        let abc = (id(&m, "ab"), id(&m, "c"));
        fired.sort();
        let mut want = vec![ab, ab, abc];
        want.sort();
        assert_eq!(fired, want);
    }

    #[test]
    fn sentencepiece_unknown_chars_use_unk_or_fail() {
        let vocab = Vocab::from_tokens(["<unk>", "▁", "a", "b", "▁a"]).unwrap();
        let mut parts = ModelParts::new(Mode::SentencePiece, vocab);
        parts.merges = vec![(1, 2)];
        let strict = TokenizerModel::new(parts.clone()).unwrap();
        assert!(matches!(strict.tokenize("a z"), Err(Error::UnknownAtom { .. })));

        parts.unk_token = Some(0);
        parts.vocab.mark_special(0).unwrap();
        let m = TokenizerModel::new(parts).unwrap();
        // "a z" -> "▁a▁z" -> ["▁a", "▁z"]
        assert_eq!(m.tokenize("a z").unwrap(), vec![4, 1, 0]);
    }

    #[test]
    fn sentencepiece_byte_fallback() {
        let mut tokens: Vec<String> = vec!["<unk>".into(), "▁".into(), "a".into()];
        tokens.extend((0..=255u8).map(byte_fallback_token));
        let vocab = Vocab::from_tokens(tokens).unwrap();
        let mut parts = ModelParts::new(Mode::SentencePiece, vocab);
        parts.byte_fallback = true;
        parts.unk_token = Some(0);
        let m = TokenizerModel::new(parts).unwrap();
        let ids = m.tokenize("aé").unwrap();
        let e = "é".as_bytes();
        assert_eq!(ids, vec![1, 2, 3 + e[0] as u32, 3 + e[1] as u32]);
        assert_eq!(m.decode(&ids).unwrap(), "aé");
        assert!(m.is_byte_fallback_token(3));
        assert!(!m.is_byte_fallback_token(2));
    }
}
