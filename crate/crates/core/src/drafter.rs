//! Draft construction from the last logit and the n-gram index.
//!
//! Given the committed context, the freshly sampled next token and the
//! distribution it was sampled from, the drafter
//!
//! 1. retrieves continuations of the next token (query ending in the next token),
//! 2. takes the top-k entries of the last logit other than the next token as
//!    guesses for the token after it,
//! 3. retrieves a continuation for each guess (query ending in next token + guess)
//!    and prunes it to a rank-dependent budget,
//!
//! stopping once the draft capacity is used up.

use serde::{Deserialize, Serialize};

use crate::dist::{Distribution, TokenId};
use crate::index::NGramIndex;

/// Where a draft sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    /// Continuation retrieved for the next token.
    NextToken,
    /// Guess for the next-next token, possibly followed by a retrieved
    /// continuation.
    Candidate { rank: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftConfig {
    /// Number of last-logit entries considered as next-next guesses.
    pub top_k: usize,
    /// Draft token budget per step.
    pub capacity: usize,
    /// Initial query gram length.
    pub m_start: usize,
    /// Maximum length of a next-token continuation.
    pub next_token_value_len: usize,
}

impl Default for DraftConfig {
    fn default() -> Self {
        Self {
            top_k: 16,
            capacity: 60,
            m_start: 3,
            next_token_value_len: 8,
        }
    }
}

impl DraftConfig {
    pub fn validate(&self, index_m_max: usize) -> Result<(), String> {
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        if self.capacity == 0 {
            return Err("capacity must be at least 1".into());
        }
        if self.m_start == 0 || self.m_start > index_m_max {
            return Err(format!("m_start must lie in 1..={index_m_max}"));
        }
        if self.next_token_value_len == 0 {
            return Err("next_token_value_len must be at least 1".into());
        }
        Ok(())
    }
}

/// Next-next-token guesses with their rank after removing the next token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pub candidates: Vec<(TokenId, usize)>,
}

/// Draft sequences to hang under the next token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DraftSet {
    pub sequences: Vec<Vec<TokenId>>,
    pub origins: Vec<Origin>,
    /// Whether any query returned a continuation.
    pub retrieval_hit: bool,
    /// Query length that matched for the next token (0 if none).
    pub used_m: usize,
}

impl DraftSet {
    /// Sequences tagged as next-token continuations; for tests and hand-built
    /// trees.
    pub fn from_sequences(sequences: Vec<Vec<TokenId>>) -> Self {
        let origins = vec![Origin::NextToken; sequences.len()];
        Self { sequences, origins, ..Self::default() }
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Pushes `seq` truncated to the remaining capacity. Returns false once the
    /// capacity is exhausted.
    fn push_within(&mut self, mut seq: Vec<TokenId>, origin: Origin, capacity: usize) -> bool {
        let remaining = capacity.saturating_sub(self.token_count());
        if remaining == 0 {
            return false;
        }
        seq.truncate(remaining);
        if !seq.is_empty() && !self.sequences.contains(&seq) {
            self.sequences.push(seq);
            self.origins.push(origin);
        }
        self.token_count() < capacity
    }
}

/// Top-`k` entries of `last_dist` other than `next_token`, by descending
/// probability with ties to the lower id. The window is taken before removal, so
/// fewer than `k` come back when the next token sits inside it.
pub fn speculate_next_next(last_dist: &Distribution, next_token: TokenId, k: usize) -> CandidateSet {
    let candidates = last_dist
        .ranking()
        .into_iter()
        .take(k)
        .filter(|&t| t != next_token)
        .enumerate()
        .map(|(rank, t)| (t, rank))
        .collect();
    CandidateSet { candidates }
}

/// Tokens kept for a guess at `rank`, the guess itself included.
pub fn prune_budget(rank: usize) -> usize {
    if rank < 8 {
        4
    } else if rank < 32 {
        3
    } else {
        1
    }
}

/// Next-token retrieval only.
pub fn build_retrieval_draft(
    index: &NGramIndex,
    context: &[TokenId],
    next_token: TokenId,
    cfg: &DraftConfig,
) -> DraftSet {
    let mut set = DraftSet::default();
    push_next_token_sequences(&mut set, index, context, next_token, cfg);
    set
}

/// Full draft: next-token retrieval followed by one pruned sequence per
/// next-next guess, in rank order, until the capacity is spent.
pub fn build_draft(
    index: &NGramIndex,
    context: &[TokenId],
    next_token: TokenId,
    last_dist: &Distribution,
    cfg: &DraftConfig,
) -> DraftSet {
    let mut set = DraftSet::default();
    if !push_next_token_sequences(&mut set, index, context, next_token, cfg) {
        return set;
    }

    let candidates = speculate_next_next(last_dist, next_token, cfg.top_k);
    let mut suffix = tail(context, cfg.m_start.saturating_sub(2));
    suffix.push(next_token);
    suffix.push(0);
    let last = suffix.len() - 1;
    for (cand, rank) in candidates.candidates {
        suffix[last] = cand;
        let budget = prune_budget(rank);
        // the guess always stays part of the query, preceded by the next token
        // whenever m_start allows it
        let (found, _) = index.match_with_fallback_limited(
            &suffix,
            cfg.m_start,
            cfg.m_start.min(2),
            budget.saturating_sub(1),
            1,
        );
        let mut seq = vec![cand];
        if let Some(cont) = found.continuations.into_iter().next() {
            set.retrieval_hit = true;
            seq.extend(cont);
        }
        seq.truncate(budget);
        if !set.push_within(seq, Origin::Candidate { rank }, cfg.capacity) {
            break;
        }
    }
    set
}

/// Last-logit-only draft: each of the top-`k` guesses as a single-token
/// sequence.
pub fn build_last_logit_draft(last_dist: &Distribution, next_token: TokenId, k: usize) -> DraftSet {
    let mut set = DraftSet::default();
    for (cand, rank) in speculate_next_next(last_dist, next_token, k).candidates {
        set.sequences.push(vec![cand]);
        set.origins.push(Origin::Candidate { rank });
    }
    set
}

fn push_next_token_sequences(
    set: &mut DraftSet,
    index: &NGramIndex,
    context: &[TokenId],
    next_token: TokenId,
    cfg: &DraftConfig,
) -> bool {
    let mut suffix = tail(context, cfg.m_start.saturating_sub(1));
    suffix.push(next_token);
    let (found, used_m) = index.match_with_fallback_limited(
        &suffix,
        cfg.m_start,
        1,
        cfg.next_token_value_len,
        index.max_matches(),
    );
    set.used_m = used_m;
    set.retrieval_hit |= !found.is_empty();
    for cont in found.continuations {
        if !set.push_within(cont, Origin::NextToken, cfg.capacity) {
            return false;
        }
    }
    true
}

fn tail(seq: &[TokenId], n: usize) -> Vec<TokenId> {
    seq[seq.len().saturating_sub(n)..].to_vec()
}
