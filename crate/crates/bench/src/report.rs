use logitspec::engine::{DecodeMetrics, PhaseCounters, RankHistogram};
use logitspec::{DecodeResult, Mode, TokenId};
use serde::{Deserialize, Serialize};

use crate::evaluate::Evaluation;

pub const TOOL_NAME: &str = "logitspec";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

impl Default for Tool {
    fn default() -> Self {
        Self { name: TOOL_NAME.to_string(), version: env!("CARGO_PKG_VERSION").to_string() }
    }
}

/// Run settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: String,
    pub corpus: String,
    pub vocab_size: usize,
    pub eos: TokenId,
    pub modes: Vec<Mode>,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
    pub top_k: usize,
    pub capacity: usize,
    pub m_start: usize,
    pub next_token_value_len: usize,
    pub last_logit_k: usize,
    pub compare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub mode: Mode,
    pub prompt: usize,
    pub position: usize,
    pub expected: Option<TokenId>,
    pub found: Option<TokenId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Losslessness {
    /// Prompt-by-mode comparisons made against autoregressive output.
    pub checked: u64,
    pub mismatches: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<Mismatch>,
}

/// Summary of one decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRow {
    pub prompt: usize,
    pub seed: u64,
    pub prompt_len: usize,
    pub steps: u64,
    pub tokens: u64,
    pub mat: f64,
    pub retrieval_hits: u64,
    pub rank_counts: RankHistogram,
    pub phase_counters: PhaseCounters,
    /// FNV-1a 64 of the output tokens (little-endian u32 each), hex.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub prompts: usize,
    pub steps: u64,
    pub tokens: u64,
    pub mat: f64,
    pub retrieval_success_rate: f64,
    pub rank_cdf: Vec<(String, f64)>,
    pub rank_counts: RankHistogram,
    pub phase_counters: PhaseCounters,
    pub rows: Vec<PromptRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: Tool,
    pub config: ConfigEcho,
    pub modes: Vec<ModeReport>,
    pub losslessness: Losslessness,
}

pub fn fnv1a64(tokens: &[TokenId]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tokens {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl PromptRow {
    pub fn new(prompt: usize, seed: u64, prompt_len: usize, result: &DecodeResult) -> Self {
        let m: &DecodeMetrics = &result.metrics;
        Self {
            prompt,
            seed,
            prompt_len,
            steps: m.steps,
            tokens: m.tokens,
            mat: m.mat,
            retrieval_hits: m.retrieval_hits,
            rank_counts: m.ranks.clone(),
            phase_counters: m.phase_counters,
            digest: fnv1a64(&result.tokens),
        }
    }
}

impl ModeReport {
    /// Pools the rows: rates are totals over totals, not means of per-prompt rates.
    pub fn from_rows(mode: Mode, rows: Vec<PromptRow>) -> Self {
        let mut steps = 0;
        let mut tokens = 0;
        let mut hits = 0;
        let mut ranks = RankHistogram::default();
        let mut phases = PhaseCounters::default();
        for r in &rows {
            steps += r.steps;
            tokens += r.tokens;
            hits += r.retrieval_hits;
            ranks.merge(&r.rank_counts);
            phases += r.phase_counters;
        }
        Self {
            mode,
            prompts: rows.len(),
            steps,
            tokens,
            mat: ratio(tokens, steps),
            retrieval_success_rate: ratio(hits, steps),
            rank_cdf: ranks.cdf(),
            rank_counts: ranks,
            phase_counters: phases,
            rows,
        }
    }
}

impl RunReport {
    pub fn new(config: ConfigEcho, prompts: &[Vec<TokenId>], eval: &Evaluation) -> Self {
        let modes = eval
            .modes
            .iter()
            .zip(&eval.results)
            .map(|(&mode, results)| {
                let rows = results
                    .iter()
                    .enumerate()
                    .map(|(i, r)| PromptRow::new(i, eval.seeds[i], prompts[i].len(), r))
                    .collect();
                ModeReport::from_rows(mode, rows)
            })
            .collect();
        Self { tool: Tool::default(), config, modes, losslessness: eval.losslessness.clone() }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Recomputes every aggregate from the rows; returns the fields that differ.
    pub fn check_aggregates(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for m in &self.modes {
            let again = ModeReport::from_rows(m.mode, m.rows.clone());
            let name = m.mode.name();
            if again.prompts != m.prompts {
                bad.push(format!("{name}.prompts"));
            }
            if again.steps != m.steps {
                bad.push(format!("{name}.steps"));
            }
            if again.tokens != m.tokens {
                bad.push(format!("{name}.tokens"));
            }
            if again.mat != m.mat {
                bad.push(format!("{name}.mat"));
            }
            if again.retrieval_success_rate != m.retrieval_success_rate {
                bad.push(format!("{name}.retrieval_success_rate"));
            }
            if again.rank_cdf != m.rank_cdf {
                bad.push(format!("{name}.rank_cdf"));
            }
            if again.rank_counts != m.rank_counts {
                bad.push(format!("{name}.rank_counts"));
            }
            if again.phase_counters != m.phase_counters {
                bad.push(format!("{name}.phase_counters"));
            }
            for r in &m.rows {
                if r.mat != ratio(r.tokens, r.steps) {
                    bad.push(format!("{name}.rows[{}].mat", r.prompt));
                }
                if r.rank_counts.total() != r.steps {
                    bad.push(format!("{name}.rows[{}].rank_counts", r.prompt));
                }
            }
        }
        bad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // FNV-1a 64 of the empty input is the offset basis; of the bytes
        // 61 00 00 00 it is the published hash of "a" continued with three zeros
        assert_eq!(fnv1a64(&[]), "cbf29ce484222325");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in [0x61u8, 0, 0, 0] {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
        assert_eq!(fnv1a64(&[0x61]), format!("{h:016x}"));
        assert_eq!(format!("{:016x}", (0xcbf29ce484222325u64 ^ 0x61).wrapping_mul(0x100000001b3)), "af63dc4c8601ec8c");
    }

    fn row(prompt: usize, steps: u64, tokens: u64, hits: u64) -> PromptRow {
        let mut ranks = RankHistogram::default();
        for i in 0..steps {
            ranks.record(i as usize);
        }
        PromptRow {
            prompt,
            seed: 0,
            prompt_len: 4,
            steps,
            tokens,
            mat: ratio(tokens, steps),
            retrieval_hits: hits,
            rank_counts: ranks,
            phase_counters: PhaseCounters::default(),
            digest: String::new(),
        }
    }

    #[test]
    fn pooled_aggregates() {
        let m = ModeReport::from_rows(Mode::Logitspec, vec![row(0, 2, 6, 1), row(1, 8, 8, 0)]);
        assert_eq!((m.steps, m.tokens), (10, 14));
        assert_eq!(m.mat, 1.4);
        assert_eq!(m.retrieval_success_rate, 0.1);
        assert_eq!(m.rank_cdf.last().unwrap().1, 1.0);
    }
}
