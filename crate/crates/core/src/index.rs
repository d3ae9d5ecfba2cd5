//! Hash-table n-gram index over the session's own tokens.
//!
//! Every gram of length `1..=m_max` is a key. The value is the list of offsets
//! just past each occurrence, so a continuation is read straight out of the
//! source and grows as more tokens are appended. Appending a token only touches
//! the `m_max` keys ending at it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::dist::TokenId;

pub const DEFAULT_M_MAX: usize = 3;
pub const DEFAULT_VALUE_LEN: usize = 8;
pub const DEFAULT_MAX_MATCHES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("query of length {len} outside 1..={m_max}")]
    QueryLength { len: usize, m_max: usize },
    #[error("m_max and value_len must be at least 1")]
    ZeroParameter,
}

/// Continuations returned for one query, most recent occurrence first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub continuations: Vec<Vec<TokenId>>,
}

impl MatchResult {
    pub fn is_empty(&self) -> bool {
        self.continuations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.continuations.len()
    }
}

#[derive(Debug)]
pub struct NGramIndex {
    m_max: usize,
    value_len: usize,
    max_matches: usize,
    source: Vec<TokenId>,
    table: HashMap<Vec<TokenId>, Vec<usize>>,
    probes: AtomicU64,
}

impl Clone for NGramIndex {
    fn clone(&self) -> Self {
        Self {
            m_max: self.m_max,
            value_len: self.value_len,
            max_matches: self.max_matches,
            source: self.source.clone(),
            table: self.table.clone(),
            probes: AtomicU64::new(self.probes()),
        }
    }
}

impl NGramIndex {
    pub fn build(source: &[TokenId], m_max: usize, value_len: usize) -> Result<Self, IndexError> {
        if m_max == 0 || value_len == 0 {
            return Err(IndexError::ZeroParameter);
        }
        let mut index = Self {
            m_max,
            value_len,
            max_matches: DEFAULT_MAX_MATCHES,
            source: Vec::with_capacity(source.len()),
            table: HashMap::new(),
            probes: AtomicU64::new(0),
        };
        index.extend(source);
        Ok(index)
    }

    pub fn with_max_matches(mut self, max_matches: usize) -> Self {
        self.max_matches = max_matches.max(1);
        self
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn value_len(&self) -> usize {
        self.value_len
    }

    pub fn max_matches(&self) -> usize {
        self.max_matches
    }

    pub fn source(&self) -> &[TokenId] {
        &self.source
    }

    /// Number of distinct keys.
    pub fn key_count(&self) -> usize {
        self.table.len()
    }

    /// Offsets recorded for `key`, in source order.
    pub fn offsets(&self, key: &[TokenId]) -> Option<&[usize]> {
        self.table.get(key).map(Vec::as_slice)
    }

    /// Hash-table lookups performed so far.
    pub fn probes(&self) -> u64 {
        self.probes.load(Ordering::Relaxed)
    }

    /// Appends tokens, registering the keys that end at each of them.
    pub fn extend(&mut self, new_tokens: &[TokenId]) {
        for &tok in new_tokens {
            self.source.push(tok);
            let end = self.source.len();
            for len in 1..=self.m_max.min(end) {
                let key = self.source[end - len..end].to_vec();
                self.table.entry(key).or_default().push(end);
            }
        }
    }

    /// Continuations of `query` with the index defaults.
    pub fn match_query(&self, query: &[TokenId]) -> Result<MatchResult, IndexError> {
        self.match_limited(query, self.value_len, self.max_matches)
    }

    /// Continuations of `query`, each at most `value_len` tokens, deduplicated by
    /// content and capped at `max_matches`. Occurrences with nothing after them
    /// yet are skipped.
    pub fn match_limited(
        &self,
        query: &[TokenId],
        value_len: usize,
        max_matches: usize,
    ) -> Result<MatchResult, IndexError> {
        if query.is_empty() || query.len() > self.m_max {
            return Err(IndexError::QueryLength { len: query.len(), m_max: self.m_max });
        }
        self.probes.fetch_add(1, Ordering::Relaxed);
        let mut result = MatchResult::default();
        let Some(offsets) = self.table.get(query) else {
            return Ok(result);
        };
        let value_len = value_len.max(1);
        for &off in offsets.iter().rev() {
            if result.continuations.len() >= max_matches {
                break;
            }
            let end = (off + value_len).min(self.source.len());
            if end <= off {
                continue;
            }
            let cont = &self.source[off..end];
            if !result.continuations.iter().any(|c| c == cont) {
                result.continuations.push(cont.to_vec());
            }
        }
        Ok(result)
    }

    /// Queries the last `m_start` tokens of `suffix`, shortening the query one
    /// token at a time down to 1 until something matches. Returns the matches and
    /// the query length used, or `(empty, 0)`.
    pub fn match_with_fallback(&self, suffix: &[TokenId], m_start: usize) -> (MatchResult, usize) {
        self.match_with_fallback_limited(suffix, m_start, 1, self.value_len, self.max_matches)
    }

    /// As [`NGramIndex::match_with_fallback`] with an explicit floor on the query
    /// length and explicit limits. `m_start` is clamped to the suffix length and
    /// `m_max`.
    pub fn match_with_fallback_limited(
        &self,
        suffix: &[TokenId],
        m_start: usize,
        m_min: usize,
        value_len: usize,
        max_matches: usize,
    ) -> (MatchResult, usize) {
        let m_start = m_start.min(suffix.len()).min(self.m_max);
        let m_min = m_min.max(1);
        let mut m = m_start;
        while m >= m_min {
            let query = &suffix[suffix.len() - m..];
            if let Ok(found) = self.match_limited(query, value_len, max_matches) {
                if !found.is_empty() {
                    return (found, m);
                }
            }
            m -= 1;
        }
        (MatchResult::default(), 0)
    }

    /// One line per key: `k1 k2 .. km | off1,off2,...`, offsets most recent first.
    /// Keys are sorted by length then lexicographically so the dump is stable.
    pub fn debug_dump(&self) -> String {
        let mut keys: Vec<&Vec<TokenId>> = self.table.keys().collect();
        keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        let mut out = String::new();
        for key in keys {
            let k = key.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
            let offs = self.table[key]
                .iter()
                .rev()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",");
            let _ = writeln!(out, "{k} | {offs}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 0;
    const B: TokenId = 1;
    const C: TokenId = 2;
    const D: TokenId = 3;

    #[test]
    fn offsets_point_past_each_occurrence() {
        let idx = NGramIndex::build(&[A, B, C, A, B, D], 2, 8).unwrap();
        assert_eq!(idx.offsets(&[A, B]), Some(&[2, 5][..]));
        assert_eq!(idx.offsets(&[B, D]), Some(&[6][..]));
        assert_eq!(idx.offsets(&[A, B, C]), None);
        assert!(idx.key_count() <= 2 * 6);
    }

    #[test]
    fn empty_and_single_token_sources() {
        let idx = NGramIndex::build(&[], 3, 8).unwrap();
        assert_eq!(idx.key_count(), 0);
        assert!(idx.match_query(&[A]).unwrap().is_empty());

        let idx = NGramIndex::build(&[A], 3, 8).unwrap();
        assert_eq!(idx.key_count(), 1);
        assert_eq!(idx.offsets(&[A]), Some(&[1][..]));
        assert!(idx.match_query(&[A]).unwrap().is_empty());
    }

    #[test]
    fn query_length_is_checked() {
        let idx = NGramIndex::build(&[A, B, C], 2, 8).unwrap();
        assert!(matches!(idx.match_query(&[A, B, C]), Err(IndexError::QueryLength { len: 3, m_max: 2 })));
        assert!(matches!(idx.match_query(&[]), Err(IndexError::QueryLength { .. })));
        assert_eq!(NGramIndex::build(&[A], 0, 8).unwrap_err(), IndexError::ZeroParameter);
    }

    #[test]
    fn continuation_becomes_available_after_extend() {
        let mut idx = NGramIndex::build(&[A, B], 3, 8).unwrap();
        assert!(idx.match_query(&[A, B]).unwrap().is_empty());
        idx.extend(&[C]);
        assert_eq!(idx.match_query(&[A, B]).unwrap().continuations, vec![vec![C]]);
        let before = idx.debug_dump();
        idx.extend(&[]);
        assert_eq!(idx.debug_dump(), before);
    }

    #[test]
    fn duplicate_continuations_collapse() {
        let idx = NGramIndex::build(&[A, B, A, B, A, B], 1, 1).unwrap();
        let m = idx.match_query(&[A]).unwrap();
        assert_eq!(m.continuations, vec![vec![B]]);
    }

    #[test]
    fn fallback_shortens_query() {
        // (X, Y, Z) never seen, (Y, Z) seen once
        let idx = NGramIndex::build(&[5, 6, 7, 9, 1, 6, 7], 3, 8).unwrap();
        let (m, used) = idx.match_with_fallback(&[4, 6, 7], 3);
        assert_eq!(used, 2);
        assert_eq!(m.continuations, vec![vec![9, 1, 6, 7]]);

        let (m, used) = idx.match_with_fallback(&[8, 8, 8], 3);
        assert!(m.is_empty());
        assert_eq!(used, 0);

        let (_, used) = idx.match_with_fallback(&[5, 6, 7], 3);
        assert_eq!(used, 3);
    }

    #[test]
    fn fallback_respects_floor() {
        let idx = NGramIndex::build(&[1, 2, 3], 3, 8).unwrap();
        let (m, used) = idx.match_with_fallback_limited(&[9, 1], 3, 2, 8, 2);
        assert!(m.is_empty());
        assert_eq!(used, 0);
        let (m, used) = idx.match_with_fallback_limited(&[9, 1], 3, 1, 8, 2);
        assert_eq!((m.continuations, used), (vec![vec![2, 3]], 1));
    }

    #[test]
    fn probes_do_not_grow_with_source() {
        let long: Vec<TokenId> = (0..5000).map(|i| (i * 7 % 13) as TokenId).collect();
        let idx = NGramIndex::build(&long, 3, 8).unwrap();
        let before = idx.probes();
        let _ = idx.match_with_fallback(&[1, 2, 3], 3);
        assert!(idx.probes() - before <= 3);
    }

    #[test]
    fn dump_format() {
        let idx = NGramIndex::build(&[A, B, A], 2, 8).unwrap();
        assert_eq!(idx.debug_dump(), "0 | 3,1\n1 | 2\n0 1 | 2\n1 0 | 3\n");
    }
}
