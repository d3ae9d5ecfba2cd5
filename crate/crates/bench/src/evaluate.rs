use logitspec::{decode, DecodeConfig, DecodeResult, Mode, TargetModel, TokenId};
use rayon::prelude::*;

use crate::report::{Losslessness, Mismatch};

/// Settings shared by every prompt of a run.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub modes: Vec<Mode>,
    /// Template for every decode; `mode` and `seed` are overwritten per run.
    pub decode: DecodeConfig,
    /// Compare speculative outputs against autoregressive ones.
    pub compare: bool,
    /// Worker threads; 0 lets rayon choose.
    pub jobs: usize,
}

/// Results of one run, indexed `[mode][prompt]` in `EvalConfig::modes` order.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub modes: Vec<Mode>,
    pub results: Vec<Vec<DecodeResult>>,
    pub seeds: Vec<u64>,
    pub losslessness: Losslessness,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sampling seed of prompt `index`. Every mode uses the same seed for a prompt.
pub fn prompt_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

fn run_mode<M: TargetModel + ?Sized>(
    model: &M,
    prompts: &[Vec<TokenId>],
    seeds: &[u64],
    cfg: &DecodeConfig,
    mode: Mode,
) -> Result<Vec<DecodeResult>, logitspec::engine::EngineError> {
    prompts
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(prompt, &seed)| decode(model, prompt, &DecodeConfig { mode, seed, ..*cfg }))
        .collect()
}

/// Decodes every prompt under every mode. Output is independent of `jobs`.
pub fn evaluate<M: TargetModel + ?Sized>(
    model: &M,
    prompts: &[Vec<TokenId>],
    cfg: &EvalConfig,
) -> Result<Evaluation, logitspec::engine::EngineError> {
    let seeds: Vec<u64> = (0..prompts.len()).map(|i| prompt_seed(cfg.decode.seed, i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .expect("thread pool");
    pool.install(|| {
        let mut results = Vec::with_capacity(cfg.modes.len());
        for &mode in &cfg.modes {
            results.push(run_mode(model, prompts, &seeds, &cfg.decode, mode)?);
        }
        let mut losslessness = Losslessness::default();
        if cfg.compare {
            let lookup = |mode: Mode| -> Result<Vec<DecodeResult>, logitspec::engine::EngineError> {
                match cfg.modes.iter().position(|&m| m == mode) {
                    Some(i) => Ok(results[i].clone()),
                    None => run_mode(model, prompts, &seeds, &cfg.decode, mode),
                }
            };
            let reference = lookup(Mode::Autoregressive)?;
            let mut compared: Vec<Mode> = cfg.modes.iter().copied().filter(|&m| m != Mode::Autoregressive).collect();
            if !compared.contains(&Mode::Logitspec) {
                compared.push(Mode::Logitspec);
            }
            for mode in compared {
                for (prompt, (a, b)) in reference.iter().zip(lookup(mode)?).enumerate() {
                    losslessness.checked += 1;
                    if let Some(position) = first_divergence(&a.tokens, &b.tokens) {
                        losslessness.mismatches += 1;
                        losslessness.first.get_or_insert(Mismatch {
                            mode,
                            prompt,
                            position,
                            expected: a.tokens.get(position).copied(),
                            found: b.tokens.get(position).copied(),
                        });
                    }
                }
            }
        }
        Ok(Evaluation { modes: cfg.modes.clone(), results, seeds, losslessness })
    })
}

/// First index where the sequences differ, counting a length difference.
pub fn first_divergence(a: &[TokenId], b: &[TokenId]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}
