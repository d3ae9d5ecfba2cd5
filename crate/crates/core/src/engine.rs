//! The decode loop.
//!
//! Every step carries a *pending* token: sampled from the previous step's
//! distribution but not yet fed to the model. A step drafts around it, builds
//! the tree rooted at it, runs one tree forward, verifies, and emits the pending
//! token plus whatever was accepted. The bonus token becomes the next pending
//! token, and the distribution it came from is the next step's last logit.
//!
//! The prefill forward over the prompt yields the first pending token and is not
//! counted as a step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{sample, Distribution, TokenId};
use crate::drafter::{build_draft, build_last_logit_draft, build_retrieval_draft, DraftConfig, DraftSet};
use crate::index::NGramIndex;
use crate::model::{ModelError, TargetModel};
use crate::tree::{prepare_attention_inputs, DraftTree};
use crate::verify::{verify_greedy, verify_stochastic, VerifyError, VerifyOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Drafting strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// No drafts; one token per forward.
    Autoregressive,
    /// Top entries of the last logit as single-token sibling drafts.
    LastLogit,
    /// Next-token retrieval only.
    RetrievalOnly,
    /// Next-token retrieval plus last-logit-guided retrieval.
    Logitspec,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Autoregressive, Mode::LastLogit, Mode::RetrievalOnly, Mode::Logitspec];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Autoregressive => "autoregressive",
            Mode::LastLogit => "last_logit",
            Mode::RetrievalOnly => "retrieval_only",
            Mode::Logitspec => "logitspec",
        }
    }

    pub fn uses_retrieval(self) -> bool {
        matches!(self, Mode::RetrievalOnly | Mode::Logitspec)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: Mode,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
    pub draft: DraftConfig,
    /// Number of guesses drafted in [`Mode::LastLogit`].
    pub last_logit_k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Logitspec,
            max_new_tokens: 128,
            temperature: 0.0,
            seed: 0,
            draft: DraftConfig::default(),
            last_logit_k: 60,
        }
    }
}

impl DecodeConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.max_new_tokens == 0 {
            return Err(EngineError::Config("max_new_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(EngineError::Config(format!("temperature {} is not >= 0", self.temperature)));
        }
        if self.mode == Mode::LastLogit && self.last_logit_k == 0 {
            return Err(EngineError::Config("last_logit_k must be at least 1".into()));
        }
        self.draft.validate(self.draft.m_start.max(1)).map_err(EngineError::Config)
    }
}

/// Operation counts per phase of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounters {
    /// Index lookups.
    pub retrieve: u64,
    /// Tree positions laid out.
    pub prepare: u64,
    /// Tree forwards.
    pub forward: u64,
    /// Verifications.
    pub verify: u64,
    /// Tokens appended to the index.
    pub update: u64,
}

impl std::ops::AddAssign for PhaseCounters {
    fn add_assign(&mut self, o: Self) {
        self.retrieve += o.retrieve;
        self.prepare += o.prepare;
        self.forward += o.forward;
        self.verify += o.verify;
        self.update += o.update;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Draft tokens emitted after the pending token.
    pub accepted_len: usize,
    /// Draft tokens in the tree.
    pub draft_size: usize,
    pub retrieval_hit: bool,
    /// Query length that matched for the next token, 0 if none.
    pub used_m: usize,
    /// Rank of the realized next-next token in the last logit.
    pub next_next_rank: Option<usize>,
    pub phase_counters: PhaseCounters,
}

/// Upper rank bounds of the histogram buckets; a final bucket takes the rest.
pub const RANK_BUCKETS: [usize; 7] = [1, 2, 4, 8, 16, 32, 60];

/// Counts of next-next ranks per bucket (`rank < bound`, first matching bound).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub counts: [u64; RANK_BUCKETS.len() + 1],
}

impl RankHistogram {
    pub fn record(&mut self, rank: usize) {
        let b = RANK_BUCKETS.iter().position(|&top| rank < top).unwrap_or(RANK_BUCKETS.len());
        self.counts[b] += 1;
    }

    pub fn merge(&mut self, other: &RankHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bucket labels (`"1"`, `"2"`, ..., `"60"`, `"rest"`).
    pub fn labels() -> Vec<String> {
        RANK_BUCKETS
            .iter()
            .map(ToString::to_string)
            .chain(std::iter::once("rest".to_string()))
            .collect()
    }

    /// Cumulative fraction of ranks inside each bucket bound.
    pub fn cdf(&self) -> Vec<(String, f64)> {
        let total = self.total();
        let mut acc = 0;
        Self::labels()
            .into_iter()
            .zip(self.counts)
            .map(|(label, c)| {
                acc += c;
                let frac = if total == 0 { 0.0 } else { acc as f64 / total as f64 };
                (label, frac)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeMetrics {
    pub steps: u64,
    pub tokens: u64,
    pub mat: f64,
    pub retrieval_hits: u64,
    pub ranks: RankHistogram,
    pub phase_counters: PhaseCounters,
}

impl DecodeMetrics {
    pub fn from_steps(tokens: usize, steps: &[StepRecord]) -> Self {
        let mut m = DecodeMetrics {
            steps: steps.len() as u64,
            tokens: tokens as u64,
            ..Self::default()
        };
        for s in steps {
            m.retrieval_hits += s.retrieval_hit as u64;
            if let Some(r) = s.next_next_rank {
                m.ranks.record(r);
            }
            m.phase_counters += s.phase_counters;
        }
        m.mat = ratio(m.tokens, m.steps);
        m
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Generated tokens, prompt excluded.
    pub tokens: Vec<TokenId>,
    pub metrics: DecodeMetrics,
    pub step_records: Vec<StepRecord>,
}

/// Everything a step produced, handed to observers after the step.
pub struct StepView<'a> {
    pub step: usize,
    pub tree: &'a DraftTree,
    /// Target distributions per tree row.
    pub dists: &'a [Distribution],
    pub outcome: &'a VerifyOutcome,
    pub record: &'a StepRecord,
    pub index: Option<&'a NGramIndex>,
    /// Committed length of the model state after the step.
    pub state_len: usize,
}

pub fn decode<M: TargetModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<DecodeResult, EngineError> {
    decode_observed(model, prompt, cfg, |_| {})
}

/// [`decode`] with a callback after every step.
pub fn decode_observed<M, F>(
    model: &M,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    mut observe: F,
) -> Result<DecodeResult, EngineError>
where
    M: TargetModel + ?Sized,
    F: FnMut(&StepView<'_>),
{
    if prompt.is_empty() {
        return Err(EngineError::EmptyPrompt);
    }
    cfg.validate()?;
    let vocab = model.vocab();
    vocab.check(prompt)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = model.new_state();
    let prefill = model.forward(&mut state, prompt)?;
    let mut last_dist = prefill.last().cloned().expect("non-empty prompt");
    let mut pending = sample(&last_dist, cfg.temperature, &mut rng);

    let mut index = if cfg.mode.uses_retrieval() {
        let mut idx = NGramIndex::build(prompt, cfg.draft.m_start, cfg.draft.next_token_value_len)
            .map_err(|e| EngineError::Config(e.to_string()))?;
        idx.extend(&[pending]);
        Some(idx)
    } else {
        None
    };

    let mut tokens: Vec<TokenId> = Vec::with_capacity(cfg.max_new_tokens);
    let mut records = Vec::new();
    while tokens.len() < cfg.max_new_tokens {
        let mut phases = PhaseCounters::default();
        let probes_before = index.as_ref().map_or(0, NGramIndex::probes);
        let drafts = match (cfg.mode, &index) {
            (Mode::Autoregressive, _) => DraftSet::default(),
            (Mode::LastLogit, _) => build_last_logit_draft(&last_dist, pending, cfg.last_logit_k),
            (Mode::RetrievalOnly, Some(idx)) => build_retrieval_draft(idx, state.committed(), pending, &cfg.draft),
            (Mode::Logitspec, Some(idx)) => build_draft(idx, state.committed(), pending, &last_dist, &cfg.draft),
            _ => unreachable!("retrieval modes always carry an index"),
        };
        phases.retrieve = index.as_ref().map_or(0, NGramIndex::probes) - probes_before;

        let tree = prepare_attention_inputs(state.len(), pending, &drafts);
        phases.prepare = tree.seq_len() as u64;

        let dists = model.forward_tree(&state, &tree)?;
        phases.forward = 1;

        let outcome = if cfg.temperature == 0.0 {
            verify_greedy(&tree, &dists)?
        } else {
            let tempered: Vec<Distribution> =
                dists.iter().map(|d| d.with_temperature(cfg.temperature)).collect();
            verify_stochastic(&tree, &tempered, &mut rng)?
        };
        phases.verify = 1;

        let realized_next_next = outcome.accepted.first().copied().unwrap_or(outcome.bonus);
        let next_next_rank = Some(last_dist.rank_of(realized_next_next));

        // write the verified branch, then drop its unaccepted tail
        let before = state.len();
        let mut branch = vec![pending];
        if let Some(j) = outcome.accepted_seq_index {
            branch.extend_from_slice(tree.sequence(j));
        }
        model.forward(&mut state, &branch)?;
        state.rollback(before + 1 + outcome.accepted.len())?;

        let mut emitted = Vec::with_capacity(1 + outcome.accepted.len());
        emitted.push(pending);
        emitted.extend_from_slice(&outcome.accepted);
        let mut stop = false;
        if let Some(pos) = emitted.iter().position(|&t| t == vocab.eos) {
            emitted.truncate(pos + 1);
            stop = true;
        }
        let room = cfg.max_new_tokens - tokens.len();
        if emitted.len() >= room {
            emitted.truncate(room);
            stop = true;
        }
        tokens.extend_from_slice(&emitted);
        if stop {
            state.rollback(prompt.len() + tokens.len())?;
        }

        if let Some(idx) = index.as_mut() {
            if !stop {
                idx.extend(&outcome.accepted);
                idx.extend(&[outcome.bonus]);
                phases.update = outcome.accepted.len() as u64 + 1;
            }
        }

        let record = StepRecord {
            accepted_len: emitted.len() - 1,
            draft_size: tree.draft_count(),
            retrieval_hit: drafts.retrieval_hit,
            used_m: drafts.used_m,
            next_next_rank,
            phase_counters: phases,
        };
        observe(&StepView {
            step: records.len(),
            tree: &tree,
            dists: &dists,
            outcome: &outcome,
            record: &record,
            index: index.as_ref(),
            state_len: state.len(),
        });
        records.push(record);
        if stop {
            break;
        }
        pending = outcome.bonus;
        last_dist = dists[outcome.next_row].clone();
    }

    let metrics = DecodeMetrics::from_steps(tokens.len(), &records);
    Ok(DecodeResult { tokens, metrics, step_records: records })
}

/// Generated tokens per verification forward.
pub fn mat(result: &DecodeResult) -> f64 {
    ratio(result.tokens.len() as u64, result.step_records.len() as u64)
}

/// Fraction of steps in which some index query matched.
pub fn retrieval_success_rate(result: &DecodeResult) -> f64 {
    let hits = result.step_records.iter().filter(|s| s.retrieval_hit).count();
    ratio(hits as u64, result.step_records.len() as u64)
}

/// Pooled next-next rank histogram.
pub fn rank_histogram(results: &[DecodeResult]) -> RankHistogram {
    let mut h = RankHistogram::default();
    for r in results {
        for s in &r.step_records {
            if let Some(rank) = s.next_next_rank {
                h.record(rank);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkovTableModel, ScriptedModel, VocabSpec};

    fn markov(seed: u64) -> MarkovTableModel {
        MarkovTableModel::from_seed(VocabSpec::new(32, 0).unwrap(), 2, 0.1, seed).unwrap()
    }

    fn cfg(mode: Mode, max: usize) -> DecodeConfig {
        DecodeConfig { mode, max_new_tokens: max, ..DecodeConfig::default() }
    }

    #[test]
    fn mat_from_accepted_lengths() {
        let records: Vec<StepRecord> = [2usize, 0, 1]
            .iter()
            .map(|&a| StepRecord {
                accepted_len: a,
                draft_size: 4,
                retrieval_hit: a > 0,
                used_m: 0,
                next_next_rank: Some(a),
                phase_counters: PhaseCounters::default(),
            })
            .collect();
        let r = DecodeResult {
            tokens: vec![1; 6],
            metrics: DecodeMetrics::from_steps(6, &records),
            step_records: records,
        };
        assert_eq!(mat(&r), 2.0);
        assert_eq!(r.metrics.mat, 2.0);
        assert!((retrieval_success_rate(&r) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn autoregressive_mat_is_one() {
        let r = decode(&markov(1), &[1, 2, 3], &cfg(Mode::Autoregressive, 50)).unwrap();
        assert_eq!(mat(&r), 1.0);
        assert!(r.step_records.iter().all(|s| s.accepted_len == 0 && s.draft_size == 0));
    }

    #[test]
    fn modes_agree_under_greedy() {
        let m = markov(2);
        let prompt = [4, 5, 6, 4, 5, 7];
        let reference = decode(&m, &prompt, &cfg(Mode::Autoregressive, 80)).unwrap().tokens;
        for mode in [Mode::LastLogit, Mode::RetrievalOnly, Mode::Logitspec] {
            assert_eq!(decode(&m, &prompt, &cfg(mode, 80)).unwrap().tokens, reference, "{mode}");
        }
    }

    #[test]
    fn last_logit_accepts_at_most_one() {
        let r = decode(&markov(3), &[1, 9, 3], &cfg(Mode::LastLogit, 100)).unwrap();
        assert!(r.step_records.iter().all(|s| s.accepted_len <= 1));
        let m = mat(&r);
        assert!((1.0..=2.0).contains(&m));
    }

    #[test]
    fn state_tracks_emitted_tokens() {
        let m = markov(4);
        let prompt = [3, 1, 4, 1, 5];
        let mut lens = Vec::new();
        let r = decode_observed(&m, &prompt, &cfg(Mode::Logitspec, 60), |v| {
            lens.push(v.state_len);
        })
        .unwrap();
        let mut emitted = 0;
        for (s, &len) in r.step_records.iter().zip(&lens) {
            emitted += s.accepted_len + 1;
            assert_eq!(len, prompt.len() + emitted);
        }
    }

    #[test]
    fn stops_at_eos() {
        let vocab = VocabSpec::new(4, 3).unwrap();
        // 1 -> 2 -> eos
        let m = ScriptedModel::new(vocab, Distribution::one_hot(4, 1).unwrap())
            .unwrap()
            .with_entry(vec![1], Distribution::one_hot(4, 2).unwrap())
            .unwrap()
            .with_entry(vec![2], Distribution::one_hot(4, 3).unwrap())
            .unwrap();
        for mode in Mode::ALL {
            let r = decode(&m, &[0], &cfg(mode, 50)).unwrap();
            assert_eq!(r.tokens, vec![1, 2, 3], "{mode}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let m = markov(1);
        assert_eq!(decode(&m, &[], &cfg(Mode::Logitspec, 5)), Err(EngineError::EmptyPrompt));
        assert!(matches!(
            decode(&m, &[99], &cfg(Mode::Logitspec, 5)),
            Err(EngineError::Model(ModelError::TokenRange { token: 99, .. }))
        ));
        assert!(matches!(decode(&m, &[1], &cfg(Mode::Logitspec, 0)), Err(EngineError::Config(_))));
        let hot = DecodeConfig { temperature: -1.0, ..cfg(Mode::Logitspec, 5) };
        assert!(matches!(decode(&m, &[1], &hot), Err(EngineError::Config(_))));
    }

    #[test]
    fn histogram_buckets() {
        let mut h = RankHistogram::default();
        for r in [0, 1, 1, 3, 59, 60, 1000] {
            h.record(r);
        }
        assert_eq!(h.counts, [1, 2, 1, 0, 0, 0, 1, 2]);
        let cdf = h.cdf();
        assert_eq!(cdf[1], ("2".to_string(), 3.0 / 7.0));
        assert_eq!(cdf.last().unwrap(), &("rest".to_string(), 1.0));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }
}
