//! Draft-tree layout for single-pass verification.
//!
//! The pending next token is the root. Every draft sequence hangs directly under
//! it and is laid out contiguously after the root, so the draft region of the
//! attention mask is block diagonal with one lower-triangular block per
//! sequence. All rows additionally see the whole past context and the root.
//!
//! ```text
//! past_len = 3, sequences [[t1, t2], [t3]]
//!
//!            past   t0 t1 t2 t3
//!   t0  ->   1 1 1  1  0  0  0
//!   t1  ->   1 1 1  1  1  0  0
//!   t2  ->   1 1 1  1  1  1  0
//!   t3  ->   1 1 1  1  0  0  1
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::dist::TokenId;
use crate::drafter::{DraftSet, Origin};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructureError {
    #[error("mask has {rows} rows but the tree has {expected} positions")]
    Shape { rows: usize, expected: usize },
    #[error("row {row} does not see itself")]
    MissingSelf { row: usize },
    #[error("row {row} does not see the root")]
    MissingRoot { row: usize },
    #[error("row {row} sees later position {col}")]
    SeesFuture { row: usize, col: usize },
    #[error("row {row} sees position {col}, which is not one of its ancestors")]
    NotAncestor { row: usize, col: usize },
    #[error("row {row} does not see its ancestor {col}")]
    MissingAncestor { row: usize, col: usize },
    #[error("row {row} is not laid out as a block-diagonal chain")]
    NotBlockDiagonal { row: usize },
    #[error("position id of row {row} is {found}, expected {expected}")]
    PositionId { row: usize, found: usize, expected: usize },
    #[error("tree was built for past length {tree}, state holds {state}")]
    PastLength { tree: usize, state: usize },
}

/// Visibility of draft positions to one another.
///
/// Only the `seq_len x seq_len` draft region is stored; columns of the past
/// context are visible to every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    past_len: usize,
    seq_len: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    /// Builds a mask from explicit draft-region rows. No structural checks are
    /// made here; see [`DraftTree::ancestor_paths`].
    pub fn from_draft_rows(past_len: usize, rows: &[Vec<bool>]) -> Self {
        let seq_len = rows.len();
        let mut bits = vec![false; seq_len * seq_len];
        for (r, row) in rows.iter().enumerate() {
            for (c, &b) in row.iter().take(seq_len).enumerate() {
                bits[r * seq_len + c] = b;
            }
        }
        Self { past_len, seq_len, bits }
    }

    pub fn rows(&self) -> usize {
        self.seq_len
    }

    /// Total columns, past context included.
    pub fn cols(&self) -> usize {
        self.past_len + self.seq_len
    }

    pub fn past_len(&self) -> usize {
        self.past_len
    }

    /// Visibility of absolute column `col` from draft row `row`.
    pub fn get(&self, row: usize, col: usize) -> bool {
        if col < self.past_len {
            return row < self.seq_len;
        }
        self.sees_draft(row, col - self.past_len)
    }

    /// Visibility of draft position `col` from draft row `row`.
    pub fn sees_draft(&self, row: usize, col: usize) -> bool {
        row < self.seq_len && col < self.seq_len && self.bits[row * self.seq_len + col]
    }

    fn set_draft(&mut self, row: usize, col: usize) {
        self.bits[row * self.seq_len + col] = true;
    }

    /// Row `r` as a string of `0`/`1` over all columns.
    pub fn row_string(&self, row: usize) -> String {
        (0..self.cols())
            .map(|c| if self.get(row, c) { '1' } else { '0' })
            .collect()
    }
}

/// Flattened draft tree: root + concatenated sequences, with its mask and
/// absolute position ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    pub draft_ids: Vec<TokenId>,
    pub seq_lens: Vec<usize>,
    pub mask: AttentionMask,
    pub position_ids: Vec<usize>,
    pub origins: Vec<Origin>,
}

impl DraftTree {
    pub fn past_len(&self) -> usize {
        self.mask.past_len
    }

    /// Number of positions including the root.
    pub fn seq_len(&self) -> usize {
        self.draft_ids.len()
    }

    /// Number of draft tokens, excluding the root.
    pub fn draft_count(&self) -> usize {
        self.draft_ids.len().saturating_sub(1)
    }

    /// Row index of the first token of each sequence.
    pub fn sequence_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.seq_lens.len());
        let mut idx = 1;
        for &len in &self.seq_lens {
            starts.push(idx);
            idx += len;
        }
        starts
    }

    /// Tokens of sequence `j` (without the root).
    pub fn sequence(&self, j: usize) -> &[TokenId] {
        let start = self.sequence_starts()[j];
        &self.draft_ids[start..start + self.seq_lens[j]]
    }

    /// For every row, the ascending list of draft positions on its root-to-row
    /// path, reconstructed from the mask alone.
    ///
    /// Valid when row 0 sees only itself and each other row `r` sees exactly its
    /// parent's visible set plus `r`, where the parent is the largest visible
    /// position below `r`. Position ids must equal `past_len + depth`.
    pub fn ancestor_paths(&self) -> Result<Vec<Vec<usize>>, StructureError> {
        let n = self.seq_len();
        if self.mask.rows() != n || self.position_ids.len() != n {
            return Err(StructureError::Shape { rows: self.mask.rows(), expected: n });
        }
        let mut paths: Vec<Vec<usize>> = Vec::with_capacity(n);
        for r in 0..n {
            if !self.mask.sees_draft(r, r) {
                return Err(StructureError::MissingSelf { row: r });
            }
            if let Some(col) = (r + 1..n).find(|&c| self.mask.sees_draft(r, c)) {
                return Err(StructureError::SeesFuture { row: r, col });
            }
            let visible: Vec<usize> = (0..r).filter(|&c| self.mask.sees_draft(r, c)).collect();
            let path = if r == 0 {
                vec![0]
            } else {
                let Some(&parent) = visible.last() else {
                    return Err(StructureError::MissingRoot { row: r });
                };
                let parent_path = &paths[parent];
                if let Some(&col) = visible.iter().find(|c| !parent_path.contains(c)) {
                    return Err(StructureError::NotAncestor { row: r, col });
                }
                if let Some(&col) = parent_path.iter().find(|c| !visible.contains(c)) {
                    return Err(StructureError::MissingAncestor { row: r, col });
                }
                let mut p = parent_path.clone();
                p.push(r);
                p
            };
            let expected = self.past_len() + path.len() - 1;
            if self.position_ids[r] != expected {
                return Err(StructureError::PositionId {
                    row: r,
                    found: self.position_ids[r],
                    expected,
                });
            }
            paths.push(path);
        }
        Ok(paths)
    }

    /// Text dump: `past_len seq_len`, draft ids, position ids, then one mask
    /// row per line.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.past_len(), self.seq_len());
        let _ = writeln!(out, "{}", join(&self.draft_ids));
        let _ = writeln!(out, "{}", join(&self.position_ids));
        for r in 0..self.seq_len() {
            let _ = writeln!(out, "{}", self.mask.row_string(r));
        }
        out
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Flattens `draft_set` under `next_token`, following the sub-sequence layout:
/// every row sees columns `[0, past_len]`, each sequence gets a local causal
/// block, and position ids count from `past_len`.
pub fn prepare_attention_inputs(past_len: usize, next_token: TokenId, draft_set: &DraftSet) -> DraftTree {
    let num_draft_tokens = draft_set.token_count();
    let seq_len = num_draft_tokens + 1;

    let mut draft_ids = Vec::with_capacity(seq_len);
    draft_ids.push(next_token);
    draft_ids.extend(draft_set.sequences.iter().flatten().copied());

    let mut mask = AttentionMask {
        past_len,
        seq_len,
        bits: vec![false; seq_len * seq_len],
    };
    let mut position_ids = vec![0usize; seq_len];
    for r in 0..seq_len {
        mask.set_draft(r, 0);
    }

    let mut idx = 1;
    let mut seq_lens = Vec::with_capacity(draft_set.sequences.len());
    for sub in &draft_set.sequences {
        let l = sub.len();
        for i in 0..l {
            for j in 0..=i {
                mask.set_draft(idx + i, idx + j);
            }
            position_ids[idx + i] = i + 1;
        }
        seq_lens.push(l);
        idx += l;
    }
    for p in &mut position_ids {
        *p += past_len;
    }

    DraftTree {
        draft_ids,
        seq_lens,
        mask,
        position_ids,
        origins: draft_set.origins.clone(),
    }
}

/// Root-to-leaf token paths recovered from the mask, in leaf order.
///
/// Rejects masks that are not the root-plus-independent-chains layout produced by
/// [`prepare_attention_inputs`].
pub fn paths_from_mask(tree: &DraftTree) -> Result<Vec<Vec<TokenId>>, StructureError> {
    let paths = tree.ancestor_paths()?;
    let n = tree.seq_len();
    for (r, path) in paths.iter().enumerate().skip(1) {
        let parent = path[path.len() - 2];
        if parent != 0 && parent != r - 1 {
            return Err(StructureError::NotBlockDiagonal { row: r });
        }
    }
    let mut is_parent = vec![false; n];
    for path in &paths {
        if path.len() >= 2 {
            is_parent[path[path.len() - 2]] = true;
        }
    }
    Ok(paths
        .iter()
        .enumerate()
        .filter(|&(r, _)| !is_parent[r])
        .map(|(_, path)| path.iter().map(|&i| tree.draft_ids[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(seqs: Vec<Vec<TokenId>>) -> DraftSet {
        DraftSet::from_sequences(seqs)
    }

    #[test]
    fn traced_example() {
        let tree = prepare_attention_inputs(3, 10, &set(vec![vec![11, 12], vec![13]]));
        assert_eq!(tree.draft_ids, vec![10, 11, 12, 13]);
        assert_eq!(tree.position_ids, vec![3, 4, 5, 4]);
        let rows: Vec<String> = (0..4).map(|r| tree.mask.row_string(r)).collect();
        assert_eq!(rows, ["1111000", "1111100", "1111110", "1111001"]);
        assert_eq!(
            paths_from_mask(&tree).unwrap(),
            vec![vec![10, 11, 12], vec![10, 13]]
        );
        assert_eq!(tree.debug_dump(), "3 4\n10 11 12 13\n3 4 5 4\n1111000\n1111100\n1111110\n1111001\n");
    }

    #[test]
    fn empty_draft_set_is_root_only() {
        let tree = prepare_attention_inputs(5, 2, &DraftSet::default());
        assert_eq!(tree.seq_len(), 1);
        assert_eq!(tree.mask.row_string(0), "111111");
        assert_eq!(tree.position_ids, vec![5]);
        assert_eq!(paths_from_mask(&tree).unwrap(), vec![vec![2]]);
    }

    #[test]
    fn single_chain_is_causal() {
        let tree = prepare_attention_inputs(0, 1, &set(vec![vec![2, 3, 4]]));
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(tree.mask.get(r, c), c <= r);
            }
        }
        assert_eq!(tree.position_ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn sibling_leak_is_rejected() {
        let mut tree = prepare_attention_inputs(2, 0, &set(vec![vec![1], vec![2]]));
        tree.mask.set_draft(2, 1);
        assert!(matches!(
            tree.ancestor_paths(),
            Err(StructureError::NotAncestor { row: 2, col: 1 }) | Err(StructureError::PositionId { row: 2, .. })
        ));
        assert!(paths_from_mask(&tree).is_err());
    }

    #[test]
    fn future_visibility_is_rejected() {
        let mut tree = prepare_attention_inputs(0, 0, &set(vec![vec![1, 2]]));
        tree.mask.set_draft(1, 2);
        assert_eq!(
            tree.ancestor_paths(),
            Err(StructureError::SeesFuture { row: 1, col: 2 })
        );
    }

    #[test]
    fn bad_position_ids_are_rejected() {
        let mut tree = prepare_attention_inputs(4, 0, &set(vec![vec![1, 2]]));
        tree.position_ids[2] = 5;
        assert!(matches!(tree.ancestor_paths(), Err(StructureError::PositionId { row: 2, .. })));
    }

    #[test]
    fn general_tree_is_not_block_diagonal() {
        // row 3 hangs under row 1 instead of the root or row 2
        let rows = vec![
            vec![true, false, false, false],
            vec![true, true, false, false],
            vec![true, true, true, false],
            vec![true, true, false, true],
        ];
        let tree = DraftTree {
            draft_ids: vec![0, 1, 2, 3],
            seq_lens: vec![3],
            mask: AttentionMask::from_draft_rows(0, &rows),
            position_ids: vec![0, 1, 2, 2],
            origins: vec![Origin::NextToken],
        };
        assert!(tree.ancestor_paths().is_ok());
        assert_eq!(paths_from_mask(&tree), Err(StructureError::NotBlockDiagonal { row: 3 }));
    }
}
