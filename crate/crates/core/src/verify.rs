//! Tree verification: greedy longest-prefix acceptance and lossless stochastic
//! acceptance with residual resampling.
//!
//! `dists[r]` is the target distribution after the root-to-`r` path of the
//! tree, so `dists[0]` predicts the token after the pending next token.

use rand::Rng;
use thiserror::Error;

use crate::dist::{Distribution, TokenId};
use crate::tree::DraftTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("draft token {0} has zero draft probability")]
    UndrawableDraft(TokenId),
    #[error("residual is identically zero; resample from the target")]
    DegenerateResidual,
    #[error("got {got} distributions for a tree of {expected} positions")]
    DistCount { got: usize, expected: usize },
}

/// Acceptance probability of a proposed token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptDecision {
    pub alpha: f64,
    pub accepted: bool,
}

/// Result of verifying one draft tree.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    /// Accepted draft tokens, in order.
    pub accepted: Vec<TokenId>,
    /// Token drawn after the last accepted position.
    pub bonus: TokenId,
    /// Index of the sequence the accepted tokens came from.
    pub accepted_seq_index: Option<usize>,
    /// Tree row whose distribution produced the bonus token.
    pub next_row: usize,
    /// The target distribution at `next_row`.
    pub next_dist: Distribution,
}

/// `1` when `p[x] >= q[x]`, otherwise `p[x] / q[x]`.
pub fn acceptance_prob(p: &Distribution, q: &Distribution, x: TokenId) -> Result<f64, VerifyError> {
    let (px, qx) = (p.prob(x), q.prob(x));
    if qx <= 0.0 {
        return Err(VerifyError::UndrawableDraft(x));
    }
    Ok(if px >= qx { 1.0 } else { px / qx })
}

/// Draws the accept/reject decision for `x` proposed from `q`.
pub fn decide<R: Rng + ?Sized>(
    p: &Distribution,
    q: &Distribution,
    x: TokenId,
    rng: &mut R,
) -> Result<AcceptDecision, VerifyError> {
    let alpha = acceptance_prob(p, q, x)?;
    let u: f64 = rng.gen();
    Ok(AcceptDecision { alpha, accepted: u < alpha })
}

/// `norm(max(0, p - q))`.
pub fn residual(p: &Distribution, q: &Distribution) -> Result<Distribution, VerifyError> {
    let weights: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    Distribution::from_weights(weights).map_err(|_| VerifyError::DegenerateResidual)
}

/// Residual against a one-hot proposal of `x`: `p` with `x` removed.
fn residual_one_hot(p: &Distribution, x: TokenId) -> Distribution {
    let mut weights = p.probs().to_vec();
    if let Some(w) = weights.get_mut(x as usize) {
        *w = 0.0;
    }
    // an all-zero residual needs p == one-hot(x), which always accepts x
    Distribution::from_weights(weights).unwrap_or_else(|_| p.clone())
}

fn check_len(tree: &DraftTree, dists: &[Distribution]) -> Result<(), VerifyError> {
    if dists.len() != tree.seq_len() {
        return Err(VerifyError::DistCount { got: dists.len(), expected: tree.seq_len() });
    }
    Ok(())
}

/// Longest argmax-consistent prefix over all sequences; ties go to the lower
/// sequence index.
pub fn verify_greedy(tree: &DraftTree, dists: &[Distribution]) -> Result<VerifyOutcome, VerifyError> {
    check_len(tree, dists)?;
    let g0 = dists[0].argmax();
    let mut best: Option<(usize, usize)> = None;
    for (j, &start) in tree.sequence_starts().iter().enumerate() {
        let len = tree.seq_lens[j];
        if len == 0 || tree.draft_ids[start] != g0 {
            continue;
        }
        let mut accepted = 1;
        while accepted < len
            && tree.draft_ids[start + accepted] == dists[start + accepted - 1].argmax()
        {
            accepted += 1;
        }
        if best.is_none_or(|(_, n)| accepted > n) {
            best = Some((j, accepted));
        }
    }
    Ok(match best {
        None => VerifyOutcome {
            accepted: Vec::new(),
            bonus: g0,
            accepted_seq_index: None,
            next_row: 0,
            next_dist: dists[0].clone(),
        },
        Some((j, n)) => {
            let start = tree.sequence_starts()[j];
            let row = start + n - 1;
            VerifyOutcome {
                accepted: tree.draft_ids[start..start + n].to_vec(),
                bonus: dists[row].argmax(),
                accepted_seq_index: Some(j),
                next_row: row,
                next_dist: dists[row].clone(),
            }
        }
    })
}

/// Stochastic verification for deterministic (one-hot) drafts.
///
/// First tokens of the sequences are tried in order against a working
/// distribution that starts at `dists[0]`; each rejection removes the rejected
/// token from it. After a sibling is accepted the rest of its sequence is
/// checked token by token. The emitted tokens are distributed exactly as
/// sampling from the target.
pub fn verify_stochastic<R: Rng + ?Sized>(
    tree: &DraftTree,
    dists: &[Distribution],
    rng: &mut R,
) -> Result<VerifyOutcome, VerifyError> {
    check_len(tree, dists)?;
    let starts = tree.sequence_starts();
    let mut working = dists[0].clone();
    for (j, &start) in starts.iter().enumerate() {
        let len = tree.seq_lens[j];
        if len == 0 {
            continue;
        }
        let x = tree.draft_ids[start];
        let u: f64 = rng.gen();
        if u >= working.prob(x) {
            working = residual_one_hot(&working, x);
            continue;
        }
        let mut accepted = 1;
        while accepted < len {
            let row = start + accepted - 1;
            let x = tree.draft_ids[start + accepted];
            let u: f64 = rng.gen();
            if u < dists[row].prob(x) {
                accepted += 1;
            } else {
                let bonus = residual_one_hot(&dists[row], x).sample_categorical(rng);
                return Ok(VerifyOutcome {
                    accepted: tree.draft_ids[start..start + accepted].to_vec(),
                    bonus,
                    accepted_seq_index: Some(j),
                    next_row: row,
                    next_dist: dists[row].clone(),
                });
            }
        }
        let row = start + len - 1;
        return Ok(VerifyOutcome {
            accepted: tree.draft_ids[start..start + len].to_vec(),
            bonus: dists[row].sample_categorical(rng),
            accepted_seq_index: Some(j),
            next_row: row,
            next_dist: dists[row].clone(),
        });
    }
    Ok(VerifyOutcome {
        accepted: Vec::new(),
        bonus: working.sample_categorical(rng),
        accepted_seq_index: None,
        next_row: 0,
        next_dist: dists[0].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drafter::DraftSet;
    use crate::tree::prepare_attention_inputs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    fn one_hot(n: usize, t: TokenId) -> Distribution {
        Distribution::one_hot(n, t).unwrap()
    }

    fn tree(seqs: Vec<Vec<TokenId>>) -> DraftTree {
        prepare_attention_inputs(0, 0, &DraftSet::from_sequences(seqs))
    }

    #[test]
    fn acceptance_prob_branches() {
        let p = dist(&[0.6, 0.4]);
        let q = dist(&[0.5, 0.5]);
        assert_eq!(acceptance_prob(&p, &q, 0).unwrap(), 1.0);
        let p = dist(&[0.3, 0.7]);
        let q = dist(&[0.6, 0.4]);
        assert!((acceptance_prob(&p, &q, 0).unwrap() - 0.5).abs() < 1e-12);
        let p = dist(&[0.0, 1.0]);
        assert_eq!(acceptance_prob(&p, &q, 0).unwrap(), 0.0);
        assert_eq!(
            acceptance_prob(&q, &one_hot(2, 1), 0),
            Err(VerifyError::UndrawableDraft(0))
        );
    }

    #[test]
    fn residual_values() {
        let r = residual(&dist(&[0.5, 0.3, 0.2]), &dist(&[0.7, 0.2, 0.1])).unwrap();
        for (a, b) in r.probs().iter().zip([0.0, 0.5, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = dist(&[0.5, 0.3, 0.2]);
        let r = residual(&p, &one_hot(3, 0)).unwrap();
        for (a, b) in r.probs().iter().zip([0.0, 0.6, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(residual(&p, &p), Err(VerifyError::DegenerateResidual));
    }

    #[test]
    fn greedy_full_chain() {
        // argmax chain after root: a=1, b=2, c=3
        let t = tree(vec![vec![1, 2]]);
        let dists = vec![one_hot(4, 1), one_hot(4, 2), one_hot(4, 3)];
        let out = verify_greedy(&t, &dists).unwrap();
        assert_eq!(out.accepted, vec![1, 2]);
        assert_eq!(out.bonus, 3);
        assert_eq!(out.accepted_seq_index, Some(0));
        assert_eq!(out.next_row, 2);
    }

    #[test]
    fn greedy_picks_matching_sibling() {
        let t = tree(vec![vec![1], vec![2]]);
        let dists = vec![one_hot(4, 2), one_hot(4, 0), one_hot(4, 3)];
        let out = verify_greedy(&t, &dists).unwrap();
        assert_eq!(out.accepted, vec![2]);
        assert_eq!(out.accepted_seq_index, Some(1));
        assert_eq!(out.bonus, 3);
    }

    #[test]
    fn greedy_total_rejection_still_emits() {
        let t = tree(vec![vec![1], vec![2]]);
        let dists = vec![one_hot(4, 3), one_hot(4, 0), one_hot(4, 0)];
        let out = verify_greedy(&t, &dists).unwrap();
        assert!(out.accepted.is_empty());
        assert_eq!(out.bonus, 3);
        assert_eq!(out.accepted_seq_index, None);
    }

    #[test]
    fn greedy_prefers_longest_then_lowest_index() {
        // rows: 0 root, 1-2 seq0 [1,5], 3-4 seq1 [1,2], 5 seq2 [1]
        let t = tree(vec![vec![1, 5], vec![1, 2], vec![1]]);
        let mut dists = vec![one_hot(6, 1); 6];
        dists[3] = one_hot(6, 2);
        dists[1] = one_hot(6, 0);
        let out = verify_greedy(&t, &dists).unwrap();
        assert_eq!(out.accepted, vec![1, 2]);
        assert_eq!(out.accepted_seq_index, Some(1));

        let t = tree(vec![vec![1], vec![1, 4]]);
        let dists = vec![one_hot(6, 1), one_hot(6, 0), one_hot(6, 0), one_hot(6, 0)];
        assert_eq!(verify_greedy(&t, &dists).unwrap().accepted_seq_index, Some(0));
    }

    #[test]
    fn stochastic_certain_and_impossible_drafts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = tree(vec![vec![1]]);
        let sure = vec![dist(&[0.0, 1.0, 0.0]), dist(&[0.2, 0.3, 0.5])];
        for _ in 0..200 {
            assert_eq!(verify_stochastic(&t, &sure, &mut rng).unwrap().accepted, vec![1]);
        }
        let never = vec![dist(&[0.5, 0.0, 0.5]), dist(&[0.2, 0.3, 0.5])];
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            let out = verify_stochastic(&t, &never, &mut rng).unwrap();
            assert!(out.accepted.is_empty());
            counts[out.bonus as usize] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn dist_count_mismatch() {
        let t = tree(vec![vec![1]]);
        assert!(matches!(
            verify_greedy(&t, &[one_hot(2, 0)]),
            Err(VerifyError::DistCount { got: 1, expected: 2 })
        ));
    }
}
