//! Target-model contract and reference models.
//!
//! A target model only has to say what the next-token distribution is after a
//! given token sequence. Incremental evaluation, tree-batched evaluation and
//! rollback are provided on top of that by [`TargetModel`]'s default methods,
//! with [`ModelState`] playing the part of a KV cache.

mod markov;
mod scripted;

use thiserror::Error;

use crate::dist::{Distribution, DistributionError, TokenId};
use crate::tree::{DraftTree, StructureError};

pub use markov::{MarkovTableModel, ModelFile, ModelFileError};
pub use scripted::ScriptedModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("token {token} out of range for vocabulary of {size}")]
    TokenRange { token: TokenId, size: usize },
    #[error("cannot keep {keep} tokens, state holds {len}")]
    RollbackRange { keep: usize, len: usize },
    #[error("forward needs at least one token")]
    EmptyInput,
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("invalid distribution: {0}")]
    Distribution(#[from] DistributionError),
    #[error("malformed draft tree: {0}")]
    Structure(#[from] StructureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VocabSpec {
    pub size: usize,
    pub eos: TokenId,
}

impl VocabSpec {
    pub fn new(size: usize, eos: TokenId) -> Result<Self, ModelError> {
        if size < 2 {
            return Err(ModelError::Vocab(format!("size {size} < 2")));
        }
        if eos as usize >= size {
            return Err(ModelError::Vocab(format!("eos {eos} >= size {size}")));
        }
        Ok(Self { size, eos })
    }

    pub fn check(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        match tokens.iter().find(|&&t| t as usize >= self.size) {
            Some(&token) => Err(ModelError::TokenRange { token, size: self.size }),
            None => Ok(()),
        }
    }
}

/// Session-local model state: the committed tokens and the distribution cached
/// after each of them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelState {
    committed: Vec<TokenId>,
    cache: Vec<Distribution>,
}

impl ModelState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn committed(&self) -> &[TokenId] {
        &self.committed
    }

    pub fn len(&self) -> usize {
        self.committed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.committed.is_empty()
    }

    /// Distribution after the last committed token.
    pub fn last_distribution(&self) -> Option<&Distribution> {
        self.cache.last()
    }

    /// Truncates to `keep_len` tokens.
    pub fn rollback(&mut self, keep_len: usize) -> Result<(), ModelError> {
        if keep_len > self.committed.len() {
            return Err(ModelError::RollbackRange { keep: keep_len, len: self.committed.len() });
        }
        self.committed.truncate(keep_len);
        self.cache.truncate(keep_len);
        Ok(())
    }
}

/// An autoregressive target model.
///
/// Implementations must be deterministic: the same context always yields a
/// bit-identical distribution.
pub trait TargetModel: Send + Sync {
    fn vocab(&self) -> VocabSpec;

    /// Next-token distribution after `context`. Tokens are already range-checked.
    fn next_distribution(&self, context: &[TokenId]) -> Distribution;

    fn new_state(&self) -> ModelState {
        ModelState::new()
    }

    /// Consumes `new_tokens`, returning the distribution after each of them.
    fn forward(&self, state: &mut ModelState, new_tokens: &[TokenId]) -> Result<Vec<Distribution>, ModelError> {
        if new_tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        self.vocab().check(new_tokens)?;
        let mut out = Vec::with_capacity(new_tokens.len());
        for &tok in new_tokens {
            state.committed.push(tok);
            let d = self.next_distribution(&state.committed);
            state.cache.push(d.clone());
            out.push(d);
        }
        Ok(out)
    }

    /// Evaluates every position of a draft tree against the committed state
    /// without advancing it. Each position sees the committed tokens plus its
    /// ancestor path as read from the mask.
    fn forward_tree(&self, state: &ModelState, tree: &DraftTree) -> Result<Vec<Distribution>, ModelError> {
        if tree.past_len() != state.len() {
            return Err(StructureError::PastLength { tree: tree.past_len(), state: state.len() }.into());
        }
        self.vocab().check(&tree.draft_ids)?;
        let paths = tree.ancestor_paths()?;
        let mut context = state.committed.clone();
        let base = context.len();
        let mut out = Vec::with_capacity(paths.len());
        for path in &paths {
            context.truncate(base);
            context.extend(path.iter().map(|&i| tree.draft_ids[i]));
            out.push(self.next_distribution(&context));
        }
        Ok(out)
    }
}

impl<M: TargetModel + ?Sized> TargetModel for &M {
    fn vocab(&self) -> VocabSpec {
        (**self).vocab()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        (**self).next_distribution(context)
    }
}

impl<M: TargetModel + ?Sized> TargetModel for Box<M> {
    fn vocab(&self) -> VocabSpec {
        (**self).vocab()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        (**self).next_distribution(context)
    }
}
