//! Draft-model-free speculative decoding guided by the last logit.
//!
//! The distribution that produced the pending next token also ranks plausible
//! tokens two positions ahead. Those guesses are used as extra retrieval keys
//! into an n-gram index of the session's own tokens, the retrieved continuations
//! are verified in one tree-masked forward, and the output is identical to
//! plain decoding of the target model.
//!
//! Modules, bottom up:
//!
//! - [`dist`]: token ids, distributions, sampling.
//! - [`model`]: the target-model contract and exact reference models.
//! - [`index`]: hash-table n-gram retrieval with incremental updates.
//! - [`drafter`]: next-next-token speculation, retrieval and pruning.
//! - [`tree`]: draft-tree layout and block-diagonal attention mask.
//! - [`verify`]: greedy and lossless stochastic verification.
//! - [`engine`]: the decode loop and its metrics.
//! - [`corpus`]: prompt files and synthetic corpora.

pub mod corpus;
pub mod dist;
pub mod drafter;
pub mod engine;
pub mod index;
pub mod model;
pub mod tree;
pub mod verify;

pub use dist::{Distribution, TokenId};
pub use drafter::{DraftConfig, DraftSet, Origin};
pub use engine::{decode, decode_observed, DecodeConfig, DecodeResult, Mode};
pub use index::NGramIndex;
pub use model::{MarkovTableModel, ModelState, ScriptedModel, TargetModel, VocabSpec};
pub use tree::{prepare_attention_inputs, DraftTree};

/// Guide chapters, compiled so their examples run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/drafting.md")]
    mod drafting {}
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
