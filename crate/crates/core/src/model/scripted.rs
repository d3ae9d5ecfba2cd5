use std::collections::HashMap;

use crate::dist::{Distribution, TokenId};

use super::{ModelError, TargetModel, VocabSpec};

/// A model given by an explicit table from contexts to distributions.
///
/// Lookup uses the longest suffix of the context present in the table, falling
/// back to `default`. An entry for the empty context overrides `default`.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    vocab: VocabSpec,
    table: HashMap<Vec<TokenId>, Distribution>,
    max_context: usize,
    default: Distribution,
}

impl ScriptedModel {
    pub fn new(vocab: VocabSpec, default: Distribution) -> Result<Self, ModelError> {
        if default.len() != vocab.size {
            return Err(ModelError::Vocab(format!(
                "default distribution has {} entries, vocabulary has {}",
                default.len(),
                vocab.size
            )));
        }
        Ok(Self { vocab, table: HashMap::new(), max_context: 0, default })
    }

    pub fn with_entry(mut self, context: Vec<TokenId>, dist: Distribution) -> Result<Self, ModelError> {
        self.insert(context, dist)?;
        Ok(self)
    }

    pub fn insert(&mut self, context: Vec<TokenId>, dist: Distribution) -> Result<(), ModelError> {
        self.vocab.check(&context)?;
        if dist.len() != self.vocab.size {
            return Err(ModelError::Vocab(format!(
                "distribution has {} entries, vocabulary has {}",
                dist.len(),
                self.vocab.size
            )));
        }
        self.max_context = self.max_context.max(context.len());
        self.table.insert(context, dist);
        Ok(())
    }
}

impl TargetModel for ScriptedModel {
    fn vocab(&self) -> VocabSpec {
        self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        let longest = self.max_context.min(context.len());
        for len in (0..=longest).rev() {
            if let Some(d) = self.table.get(&context[context.len() - len..]) {
                return d.clone();
            }
        }
        self.default.clone()
    }
}
