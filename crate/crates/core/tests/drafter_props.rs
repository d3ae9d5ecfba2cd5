//! Drafting invariants over random inputs.

use logitspec::drafter::{build_draft, prune_budget, speculate_next_next};
use logitspec::{DraftConfig, Distribution, NGramIndex, Origin, TokenId};
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut w| {
        w[0] += 1e-3;
        w
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn draft_invariants(
        source in prop::collection::vec(0u32..12, 0..120),
        ctx_tail in prop::collection::vec(0u32..12, 1..4),
        next in 0u32..12,
        w in weights(12),
        top_k in 1usize..14,
        capacity in 1usize..40,
        m_start in 1usize..=3,
    ) {
        let mut context = source.clone();
        context.extend_from_slice(&ctx_tail);
        let mut known = context.clone();
        known.push(next);
        let index = NGramIndex::build(&known, 3, 8).unwrap();
        let dist = Distribution::from_weights(w).unwrap();
        let cfg = DraftConfig { top_k, capacity, m_start, next_token_value_len: 8 };
        let set = build_draft(&index, &context, next, &dist, &cfg);

        prop_assert!(set.token_count() <= capacity);
        prop_assert_eq!(set.sequences.len(), set.origins.len());
        let mut seen_candidate = false;
        let mut last_rank = 0;
        let cands = speculate_next_next(&dist, next, top_k);
        for (seq, origin) in set.sequences.iter().zip(&set.origins) {
            prop_assert!(!seq.is_empty());
            match *origin {
                Origin::NextToken => prop_assert!(!seen_candidate),
                Origin::Candidate { rank } => {
                    seen_candidate = true;
                    prop_assert!(rank >= last_rank);
                    last_rank = rank;
                    prop_assert!(seq.len() <= prune_budget(rank));
                    let (tok, _) = cands.candidates[rank];
                    prop_assert_eq!(seq[0], tok);
                }
            }
        }
        for (i, a) in set.sequences.iter().enumerate() {
            prop_assert!(!set.sequences[i + 1..].contains(a));
        }
    }

    #[test]
    fn candidates_exclude_next_token(w in weights(20), next in 0u32..20, k in 1usize..25) {
        let dist = Distribution::from_weights(w).unwrap();
        let c = speculate_next_next(&dist, next, k);
        prop_assert!(c.candidates.len() <= k);
        prop_assert!(c.candidates.iter().all(|&(t, _)| t != next));
        for (i, &(t, r)) in c.candidates.iter().enumerate() {
            prop_assert_eq!(r, i);
            if i > 0 {
                prop_assert!(dist.prob(c.candidates[i - 1].0) >= dist.prob(t));
            }
        }
    }
}

#[test]
fn budget_is_non_increasing() {
    for r in 0..100 {
        assert!(prune_budget(r + 1) <= prune_budget(r));
    }
}

// "what is the area of the"
const WHAT: TokenId = 0;
const IS: TokenId = 1;
const THE: TokenId = 2;
const AREA: TokenId = 3;
const OF: TokenId = 4;

#[test]
fn last_logit_guess_retrieves_the_right_reference() {
    let context = [WHAT, IS, THE, AREA, OF];
    let next = THE;
    let mut known = context.to_vec();
    known.push(next);
    let index = NGramIndex::build(&known, 3, 8).unwrap();
    // the last logit put `the` first and `area` second
    let mut w = vec![0.01; 8];
    w[THE as usize] = 0.6;
    w[AREA as usize] = 0.3;
    let dist = Distribution::from_weights(w).unwrap();
    let cfg = DraftConfig { top_k: 2, ..DraftConfig::default() };
    let set = build_draft(&index, &context, next, &dist, &cfg);
    // the next-token query falls back to (the) and finds "area of the"; the
    // candidate query (the, area) finds "of the", which duplicates it
    assert_eq!(set.sequences, vec![vec![AREA, OF, THE]]);
    assert_eq!(set.used_m, 1);
    assert!(set.retrieval_hit);

    let (found, m) = index.match_with_fallback_limited(&[next, AREA], 3, 2, 3, 1);
    assert_eq!((found.continuations, m), (vec![vec![OF, THE]], 2));
}
