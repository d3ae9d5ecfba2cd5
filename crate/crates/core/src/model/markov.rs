use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, Corpus, CorpusSpec};
use crate::dist::{Distribution, TokenId};

use super::{ModelError, TargetModel, VocabSpec};

/// Training corpus drawn when a model file names neither counts nor a corpus.
const SEEDED_TRAIN_COUNT: usize = 32;
const SEEDED_TRAIN_LENGTH: usize = 96;
const SEEDED_TRAIN_REPETITIVENESS: f64 = 0.6;

/// Order-`o` add-alpha Markov model with backoff.
///
/// The distribution after a context uses the longest context suffix (at most
/// `order` tokens) that was seen in training:
///
/// ```text
/// P(t | c) = (count(c, t) + alpha) / (sum_u count(c, u) + alpha * V)
/// ```
///
/// The empty context is always available, so unseen contexts fall back to the
/// smoothed unigram distribution.
#[derive(Debug, Clone)]
pub struct MarkovTableModel {
    vocab: VocabSpec,
    order: usize,
    alpha: f64,
    seed: u64,
    counts: HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>>,
}

impl MarkovTableModel {
    /// Model with no counts; every distribution is uniform.
    pub fn empty(vocab: VocabSpec, order: usize, alpha: f64) -> Result<Self, ModelError> {
        if order == 0 {
            return Err(ModelError::Vocab("order must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ModelError::Vocab(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { vocab, order, alpha, seed: 0, counts: HashMap::new() })
    }

    pub fn from_sequences(
        vocab: VocabSpec,
        order: usize,
        alpha: f64,
        sequences: &[Vec<TokenId>],
    ) -> Result<Self, ModelError> {
        let mut model = Self::empty(vocab, order, alpha)?;
        for seq in sequences {
            model.train(seq)?;
        }
        Ok(model)
    }

    /// Trains on a synthetic repetitive corpus derived from `seed`. The eos token
    /// does not occur in it.
    pub fn from_seed(vocab: VocabSpec, order: usize, alpha: f64, seed: u64) -> Result<Self, ModelError> {
        let spec = CorpusSpec {
            vocab: vocab.size,
            count: SEEDED_TRAIN_COUNT,
            length: SEEDED_TRAIN_LENGTH,
            repetitiveness: SEEDED_TRAIN_REPETITIVENESS,
            avoid: Some(vocab.eos),
        };
        let corpus = corpus::generate(seed, &spec).map_err(|e| ModelError::Vocab(e.to_string()))?;
        let mut model = Self::from_sequences(vocab, order, alpha, &corpus.sequences)?;
        model.seed = seed;
        Ok(model)
    }

    /// Adds every (context, token) pair of `seq` with context lengths 0..=order.
    pub fn train(&mut self, seq: &[TokenId]) -> Result<(), ModelError> {
        self.vocab.check(seq)?;
        for i in 0..seq.len() {
            for len in 0..=self.order.min(i) {
                *self
                    .counts
                    .entry(seq[i - len..i].to_vec())
                    .or_default()
                    .entry(seq[i])
                    .or_default() += 1;
            }
        }
        Ok(())
    }

    pub fn add_count(&mut self, context: &[TokenId], token: TokenId, count: u64) -> Result<(), ModelError> {
        if context.len() > self.order {
            return Err(ModelError::Vocab(format!(
                "context of {} tokens exceeds order {}",
                context.len(),
                self.order
            )));
        }
        self.vocab.check(context)?;
        self.vocab.check(&[token])?;
        *self.counts.entry(context.to_vec()).or_default().entry(token).or_default() += count;
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `ctx -> token:count,...` lines, sorted by context length then content.
    pub fn count_lines(&self) -> Vec<String> {
        let mut contexts: Vec<&Vec<TokenId>> = self.counts.keys().collect();
        contexts.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        contexts
            .into_iter()
            .map(|ctx| {
                let c = ctx.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
                let entries = self.counts[ctx]
                    .iter()
                    .map(|(t, n)| format!("{t}:{n}"))
                    .collect::<Vec<_>>()
                    .join(",");
                if c.is_empty() {
                    format!("-> {entries}")
                } else {
                    format!("{c} -> {entries}")
                }
            })
            .collect()
    }

    /// Equivalent model file with explicit counts.
    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            vocab_size: self.vocab.size,
            eos: self.vocab.eos,
            order: self.order,
            alpha: self.alpha,
            seed: self.seed,
            train_corpus_path: None,
            explicit_counts: Some(self.count_lines()),
        }
    }
}

impl TargetModel for MarkovTableModel {
    fn vocab(&self) -> VocabSpec {
        self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        let v = self.vocab.size;
        let longest = self.order.min(context.len());
        let counts = (0..=longest)
            .rev()
            .find_map(|len| self.counts.get(&context[context.len() - len..]));
        let mut weights = vec![self.alpha; v];
        let mut total = self.alpha * v as f64;
        if let Some(counts) = counts {
            for (&t, &n) in counts {
                weights[t as usize] += n as f64;
                total += n as f64;
            }
        }
        for w in &mut weights {
            *w /= total;
        }
        Distribution::new(weights).expect("add-alpha weights normalize")
    }
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing model file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("count line {line}: {msg}")]
    CountLine { line: usize, msg: String },
    #[error("model file sets both train_corpus_path and explicit_counts")]
    Ambiguous,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
}

/// On-disk description of a [`MarkovTableModel`] (TOML).
///
/// Training data comes from `explicit_counts` lines, from `train_corpus_path`
/// (relative paths resolve against the model file's directory), or, when
/// neither is given, from a synthetic corpus drawn with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub vocab_size: usize,
    pub eos: TokenId,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_corpus_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_counts: Option<Vec<String>>,
}

fn default_order() -> usize {
    2
}

fn default_alpha() -> f64 {
    0.1
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, ModelFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), ModelFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::parse(&text)?, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model file serializes")
    }

    pub fn build(&self, base_dir: &Path) -> Result<MarkovTableModel, ModelFileError> {
        let vocab = VocabSpec::new(self.vocab_size, self.eos)?;
        let mut model = match (&self.explicit_counts, &self.train_corpus_path) {
            (Some(_), Some(_)) => return Err(ModelFileError::Ambiguous),
            (Some(lines), None) => {
                let mut model = MarkovTableModel::empty(vocab, self.order, self.alpha)?;
                for (i, line) in lines.iter().enumerate() {
                    let (ctx, entries) = parse_count_line(line)
                        .map_err(|msg| ModelFileError::CountLine { line: i + 1, msg })?;
                    for (tok, n) in entries {
                        model
                            .add_count(&ctx, tok, n)
                            .map_err(|e| ModelFileError::CountLine { line: i + 1, msg: e.to_string() })?;
                    }
                }
                model
            }
            (None, Some(path)) => {
                let corpus = Corpus::load(&base_dir.join(path))?;
                MarkovTableModel::from_sequences(vocab, self.order, self.alpha, &corpus.sequences)?
            }
            (None, None) => MarkovTableModel::from_seed(vocab, self.order, self.alpha, self.seed)?,
        };
        model.seed = self.seed;
        Ok(model)
    }
}

type CountEntries = Vec<(TokenId, u64)>;

fn parse_count_line(line: &str) -> Result<(Vec<TokenId>, CountEntries), String> {
    let (ctx, rest) = line.split_once("->").ok_or("missing '->'")?;
    let ctx = ctx
        .split_whitespace()
        .map(|t| t.parse::<TokenId>().map_err(|e| format!("context token {t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut entries = Vec::new();
    for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (t, n) = item.split_once(':').ok_or_else(|| format!("entry {item:?} lacks ':'"))?;
        let t = t.trim().parse::<TokenId>().map_err(|e| format!("token {t:?}: {e}"))?;
        let n = n.trim().parse::<u64>().map_err(|e| format!("count {n:?}: {e}"))?;
        entries.push((t, n));
    }
    Ok((ctx, entries))
}
